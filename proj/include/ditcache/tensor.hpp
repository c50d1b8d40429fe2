#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ditcache/rng.hpp"

namespace ditcache {

// Dense row-major f32 tensor. Plain value type; every public op below
// validates shapes and guarantees a finite result (throws otherwise).
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int> shp, std::vector<float> dat);

  static Tensor zeros(std::vector<int> shp);
  static Tensor full(std::vector<int> shp, float value);
  static Tensor randn(std::vector<int> shp, Rng& rng, float stddev = 1.0f);

  size_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }

  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

// Throws ShapeError unless a and b have identical shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
// Throws DomainError naming `what` if any element is NaN/Inf.
void check_finite(const Tensor& t, const char* what);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
Tensor gelu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
void add_inplace(Tensor& a, const Tensor& b);
void axpy_inplace(Tensor& a, float alpha, const Tensor& b);  // a += alpha * b

}  // namespace ditcache
