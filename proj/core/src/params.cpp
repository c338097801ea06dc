#include "translk/params.hpp"

#include <cmath>
#include <random>

namespace translk {

ParamId ParamLayout::add(std::string name, const Shape& shape, Init init, Index fan_in) {
  check_valid(shape);
  if (by_name_.count(name) != 0) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  ParamId id = specs_.size();
  by_name_.emplace(name, id);
  specs_.push_back({std::move(name), shape, init, fan_in});
  return id;
}

std::optional<ParamId> ParamLayout::find(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

Index ParamLayout::total() const {
  Index t = 0;
  for (const auto& s : specs_) t += s.shape.numel();
  return t;
}

namespace {

double truncated_normal(std::mt19937_64& rng, double std) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    double z = normal(rng);
    if (std::abs(z) <= 2.0) return z * std;
  }
}

}  // namespace

template <class T>
ParamStore<T>::ParamStore(const ParamLayout& layout, std::uint64_t seed)
    : layout_(&layout), seed_(seed) {
  std::mt19937_64 rng(seed);
  values_.reserve(layout.size());
  grads_.reserve(layout.size());
  for (const auto& spec : layout.specs()) {
    Tensor<T> v(spec.shape);
    switch (spec.init) {
      case Init::zeros:
        break;
      case Init::ones:
        v.fill(T(1));
        break;
      case Init::trunc_normal:
        for (auto& x : v.data()) x = static_cast<T>(truncated_normal(rng, 0.02));
        break;
      case Init::kaiming: {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(spec.fan_in)));
        for (auto& x : v.data()) x = static_cast<T>(normal(rng));
        break;
      }
    }
    values_.push_back(std::move(v));
    grads_.emplace_back(spec.shape);
  }
}

template <class T>
Tensor<T>& ParamStore<T>::value(const std::string& name) {
  return values_.at(id(name));
}

template <class T>
ParamId ParamStore<T>::id(const std::string& name) const {
  auto found = layout_->find(name);
  if (!found) throw std::out_of_range("unknown parameter: " + name);
  return *found;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& g : grads_) g.fill(T(0));
}

template <class T>
Index ParamStore<T>::total() const {
  Index t = 0;
  for (const auto& v : values_) t += v.numel();
  return t;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamStore<long double>;

}  // namespace translk
