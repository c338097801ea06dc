#include "translk/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace translk {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << dims[0] << ", " << dims[1] << ", " << dims[2] << ", " << dims[3] << ", "
     << dims[4] << ')';
  return os.str();
}

void check_valid(const Shape& s) {
  for (std::size_t i = 0; i < 5; ++i) {
    if (s.dims[i] < 1) {
      throw ShapeError("tensor dim " + std::to_string(i) + " must be >= 1, got shape " + s.str());
    }
  }
}

template <class T>
Tensor<T>::Tensor(const Shape& shape, T fill) : shape_(shape) {
  check_valid(shape);
  data_.assign(static_cast<std::size_t>(shape.numel()), fill);
}

template <class T>
Tensor<T>::Tensor(const Shape& shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  check_valid(shape);
  if (static_cast<Index>(data_.size()) != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape.str());
  }
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("dot: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  double acc = 0.0;
  for (Index i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  double m = 0.0;
  for (Index i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;
template double dot(const Tensor<float>&, const Tensor<float>&);
template double dot(const Tensor<double>&, const Tensor<double>&);
template double max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template double dot(const Tensor<long double>&, const Tensor<long double>&);
template double max_abs_diff(const Tensor<long double>&, const Tensor<long double>&);

}  // namespace translk
