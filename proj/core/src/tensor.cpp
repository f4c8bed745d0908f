#include "rhrseg/tensor.hpp"

#include <algorithm>
#include <cstring>

namespace rhrseg {

void TensorShape::validate() const {
  if (!valid()) throw ShapeError("invalid tensor shape " + str());
}

std::string TensorShape::str() const {
  return "(" + std::to_string(batch) + "," + std::to_string(channels) + "," +
         std::to_string(height) + "," + std::to_string(width) + ")";
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template class Tensor<float>;
template class Tensor<double>;
template bool bitwise_equal(const Tensor<float>&, const Tensor<float>&);
template bool bitwise_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace rhrseg
