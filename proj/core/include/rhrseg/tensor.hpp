#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rhrseg/errors.hpp"

namespace rhrseg {

// NCHW dimensions of a feature map or image batch. Weight tensors reuse the
// same four slots as (out, in, kh, kw).
struct TensorShape {
  int batch = 1;
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(batch) * channels * height * width;
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(height) * width;
  }
  bool valid() const {
    return batch >= 1 && channels >= 1 && height >= 1 && width >= 1;
  }
  // Throws ShapeError unless every field is >= 1.
  void validate() const;
  std::string str() const;

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

// Dense row-major NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0, 0, 0, 0} {}
  explicit Tensor(const TensorShape& shape, T fill = T(0))
      : shape_(shape), data_((shape.validate(), shape.numel()), fill) {}
  Tensor(const TensorShape& shape, std::vector<T> data);

  const TensorShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T* plane_ptr(int n, int c) {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.channels + c) *
                              shape_.plane();
  }
  const T* plane_ptr(int n, int c) const {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.channels + c) *
                              shape_.plane();
  }
  T* sample_ptr(int n) { return plane_ptr(n, 0); }
  const T* sample_ptr(int n) const { return plane_ptr(n, 0); }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.channels + c) *
                shape_.height +
            h) *
               shape_.width +
           w;
  }
  T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  T at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  TensorShape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T>::Tensor(const TensorShape& shape, std::vector<T> data)
    : shape_(shape), data_(std::move(data)) {
  shape_.validate();
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

// Bitwise comparison, distinguishing -0.0 from 0.0 and NaN payloads.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace rhrseg
