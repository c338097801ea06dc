#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "translk/tensor.hpp"

namespace translk {

using ParamId = std::size_t;

enum class Init {
  zeros,
  ones,
  trunc_normal,  // std 0.02, cut at two standard deviations
  kaiming,       // normal with std sqrt(2 / fan_in)
};

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::zeros;
  Index fan_in = 1;
};

/// Ordered set of named parameter declarations. Holds no values, so the
/// same layout can be materialized in any precision.
class ParamLayout {
 public:
  ParamId add(std::string name, const Shape& shape, Init init, Index fan_in = 1);

  std::size_t size() const { return specs_.size(); }
  const ParamSpec& spec(ParamId id) const { return specs_.at(id); }
  const std::vector<ParamSpec>& specs() const { return specs_; }
  std::optional<ParamId> find(const std::string& name) const;

  /// Total number of scalar parameters.
  Index total() const;

 private:
  std::vector<ParamSpec> specs_;
  std::unordered_map<std::string, ParamId> by_name_;
};

/// Parameter values and gradient buffers for a layout. Initialization draws
/// from one mt19937_64 stream in declaration order, sampled in double and
/// then converted, so float and double stores built from the same seed hold
/// the same values up to rounding.
template <class T>
class ParamStore {
 public:
  ParamStore(const ParamLayout& layout, std::uint64_t seed);

  std::size_t size() const { return values_.size(); }
  std::uint64_t seed() const { return seed_; }
  const ParamLayout& layout() const { return *layout_; }
  const std::string& name(ParamId id) const { return layout_->spec(id).name; }

  Tensor<T>& value(ParamId id) { return values_.at(id); }
  const Tensor<T>& value(ParamId id) const { return values_.at(id); }
  Tensor<T>& grad(ParamId id) { return grads_.at(id); }
  const Tensor<T>& grad(ParamId id) const { return grads_.at(id); }

  Tensor<T>& value(const std::string& name);
  ParamId id(const std::string& name) const;

  void zero_grad();
  Index total() const;

  template <class U>
  void copy_values_from(const ParamStore<U>& other);

 private:
  const ParamLayout* layout_;
  std::uint64_t seed_;
  std::vector<Tensor<T>> values_;
  std::vector<Tensor<T>> grads_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class ParamStore<long double>;

template <class T>
template <class U>
void ParamStore<T>::copy_values_from(const ParamStore<U>& other) {
  if (other.size() != size()) throw ShapeError("copy_values_from: parameter count mismatch");
  for (ParamId i = 0; i < size(); ++i) {
    if (other.value(i).shape() != values_[i].shape()) {
      throw ShapeError("copy_values_from: shape mismatch for " + name(i));
    }
    values_[i] = other.value(i).template cast<T>();
  }
}

}  // namespace translk
