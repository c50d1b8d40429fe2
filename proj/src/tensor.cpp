#include "ditcache/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ditcache/errors.hpp"
#include "ditcache/kernels.hpp"

namespace ditcache {

namespace {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
    n *= static_cast<size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shp, std::vector<float> dat)
    : shape(std::move(shp)), data(std::move(dat)) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::zeros(std::vector<int> shp) {
  const size_t n = shape_numel(shp);
  Tensor t;
  t.shape = std::move(shp);
  t.data.assign(n, 0.0f);
  return t;
}

Tensor Tensor::full(std::vector<int> shp, float value) {
  const size_t n = shape_numel(shp);
  Tensor t;
  t.shape = std::move(shp);
  t.data.assign(n, value);
  return t;
}

Tensor Tensor::randn(std::vector<int> shp, Rng& rng, float stddev) {
  const size_t n = shape_numel(shp);
  Tensor t;
  t.shape = std::move(shp);
  t.data.resize(n);
  for (size_t i = 0; i < n; ++i) t.data[i] = stddev * rng.normal();
  return t;
}

size_t Tensor::numel() const {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
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

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

void check_finite(const Tensor& t, const char* what) {
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      throw DomainError(std::string(what) + ": non-finite value produced");
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected rank-2 tensors, got " + a.shape_str() +
                     " and " + b.shape_str());
  }
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() +
                     " x " + b.shape_str());
  }
  Tensor c = Tensor::zeros({a.rows(), b.cols()});
  kernels::matmul(a.data.data(), b.data.data(), c.data.data(), a.rows(),
                  a.cols(), b.cols());
  check_finite(c, "matmul");
  return c;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw DomainError("softmax: axis " + std::to_string(axis) +
                      " out of bounds for " + x.shape_str());
  }
  const int len = x.dim(axis);
  size_t inner = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<size_t>(x.dim(i));
  size_t outer = x.numel() / (static_cast<size_t>(len) * inner);

  Tensor y = Tensor::zeros(x.shape);
  if (inner == 1) {
    kernels::softmax_rows(x.data.data(), y.data.data(),
                          static_cast<int>(outer), len);
  } else {
    // Strided slices; gather, compute, scatter.
    std::vector<float> buf(static_cast<size_t>(len)), out(static_cast<size_t>(len));
    for (size_t o = 0; o < outer; ++o) {
      for (size_t in = 0; in < inner; ++in) {
        const size_t base = o * static_cast<size_t>(len) * inner + in;
        for (int j = 0; j < len; ++j) buf[static_cast<size_t>(j)] = x.data[base + static_cast<size_t>(j) * inner];
        kernels::serial::softmax_rows(buf.data(), out.data(), 1, len);
        for (int j = 0; j < len; ++j) y.data[base + static_cast<size_t>(j) * inner] = out[static_cast<size_t>(j)];
      }
    }
  }
  check_finite(y, "softmax");
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
  const int cols = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != cols || beta.rank() != 1 || beta.dim(0) != cols) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(cols) +
                     "], got " + gamma.shape_str() + " and " + beta.shape_str());
  }
  const int rows = static_cast<int>(x.numel() / static_cast<size_t>(cols));
  Tensor y = Tensor::zeros(x.shape);
  kernels::layer_norm_rows(x.data.data(), y.data.data(), rows, cols,
                           gamma.data.data(), beta.data.data(), eps);
  check_finite(y, "layer_norm");
  return y;
}

Tensor gelu(const Tensor& x) {
  Tensor y = Tensor::zeros(x.shape);
  kernels::gelu(x.data.data(), y.data.data(), x.numel());
  check_finite(y, "gelu");
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor y = Tensor::zeros(a.shape);
  kernels::add(a.data.data(), b.data.data(), y.data.data(), a.numel());
  check_finite(y, "add");
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor y = Tensor::zeros(a.shape);
  kernels::sub(a.data.data(), b.data.data(), y.data.data(), a.numel());
  check_finite(y, "sub");
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor y = Tensor::zeros(a.shape);
  kernels::mul(a.data.data(), b.data.data(), y.data.data(), a.numel());
  check_finite(y, "mul");
  return y;
}

Tensor scale(const Tensor& a, float s) {
  Tensor y = Tensor::zeros(a.shape);
  kernels::scale(a.data.data(), s, y.data.data(), a.numel());
  check_finite(y, "scale");
  return y;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  kernels::add(a.data.data(), b.data.data(), a.data.data(), a.numel());
  check_finite(a, "add_inplace");
}

void axpy_inplace(Tensor& a, float alpha, const Tensor& b) {
  require_same_shape(a, b, "axpy_inplace");
  kernels::axpy(a.data.data(), alpha, b.data.data(), a.numel());
  check_finite(a, "axpy_inplace");
}

}  // namespace ditcache
