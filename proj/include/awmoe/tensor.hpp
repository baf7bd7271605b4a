#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace awmoe::nn {

/// Dense n-dimensional float32 array, row-major. Image/grid tensors use
/// {channels, height, width}; vectors use {n}.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  int numel() const { return static_cast<int>(data.size()); }
  bool empty() const { return data.empty(); }

  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  // 3D (c, h, w) accessors; caller guarantees shape.
  float& at3(int c, int h, int w) {
    return data[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  float at3(int c, int h, int w) const {
    return data[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w];
  }

  float& operator[](size_t i) { return data[i]; }
  float operator[](size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool operator==(const Tensor& o) const = default;

  std::string shape_str() const;

  static size_t numel_of(const std::vector<int>& s);
};

/// Throws std::invalid_argument naming both shapes when they differ.
void check_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace awmoe::nn
