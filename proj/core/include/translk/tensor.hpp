#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace translk {

using Index = std::int64_t;

/// Thrown when tensor shapes or layer geometry do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rank-5 extent in (batch, channel, depth, height, width) order.
struct Shape {
  std::array<Index, 5> dims{1, 1, 1, 1, 1};

  constexpr Shape() = default;
  constexpr Shape(Index n, Index c, Index d, Index h, Index w) : dims{n, c, d, h, w} {}

  /// A length-L vector stored as (L, 1, 1, 1, 1).
  static constexpr Shape vec(Index length) { return {length, 1, 1, 1, 1}; }

  constexpr Index n() const { return dims[0]; }
  constexpr Index c() const { return dims[1]; }
  constexpr Index d() const { return dims[2]; }
  constexpr Index h() const { return dims[3]; }
  constexpr Index w() const { return dims[4]; }
  constexpr Index operator[](std::size_t i) const { return dims[i]; }

  constexpr Index spatial() const { return dims[2] * dims[3] * dims[4]; }
  constexpr Index numel() const { return dims[0] * dims[1] * spatial(); }

  constexpr Shape with_channels(Index c) const { return {dims[0], c, dims[2], dims[3], dims[4]}; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

/// Dense row-major rank-5 array. All dims are >= 1 and the data length is the
/// product of the dims.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T(0)) {}
  explicit Tensor(const Shape& shape, T fill = T(0));
  Tensor(const Shape& shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  Index numel() const { return static_cast<Index>(data_.size()); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  Index offset(Index n, Index c, Index d, Index h, Index w) const {
    return (((n * shape_.c() + c) * shape_.d() + d) * shape_.h() + h) * shape_.w() + w;
  }
  T& at(Index n, Index c, Index d, Index h, Index w) { return data_[offset(n, c, d, h, w)]; }
  const T& at(Index n, Index c, Index d, Index h, Index w) const {
    return data_[offset(n, c, d, h, w)];
  }

  /// Start of the (n, c) spatial volume.
  T* plane(Index n, Index c) { return data_.data() + (n * shape_.c() + c) * shape_.spatial(); }
  const T* plane(Index n, Index c) const {
    return data_.data() + (n * shape_.c() + c) * shape_.spatial();
  }

  void fill(T v);
  bool all_finite() const;

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

void check_valid(const Shape& s);

/// Sum of elementwise products over two same-shape tensors, accumulated in double.
template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tensor<long double>;

}  // namespace translk
