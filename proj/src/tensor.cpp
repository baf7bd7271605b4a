#include "awmoe/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace awmoe::nn {

size_t Tensor::numel_of(const std::vector<int>& s) {
  size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("Tensor: negative extent");
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

}  // namespace awmoe::nn
