#pragma once

#include <cstddef>

namespace ditcache::kernels {

// Thread cap for the OpenMP kernels. 1 forces the serial reference path,
// 0 resets to the OpenMP default. Both paths are bit-identical: parallel
// loops only split independent output elements, never a summation.
void set_max_threads(int n);
int max_threads();

// Serial reference kernels. These stay deliberately plain; the tests pin
// the OpenMP variants against them bit for bit.
namespace serial {
void matmul(const float* a, const float* b, float* c, int m, int k, int n);
// c[m x n] = a^T[k x m] * b[k x n]
void matmul_at_b(const float* a, const float* b, float* c, int m, int k, int n);
// c[m x n] = a[m x k] * b^T[n x k]
void matmul_a_bt(const float* a, const float* b, float* c, int m, int k, int n);
void add(const float* a, const float* b, float* y, size_t n);
void sub(const float* a, const float* b, float* y, size_t n);
void mul(const float* a, const float* b, float* y, size_t n);
void scale(const float* x, float s, float* y, size_t n);
void axpy(float* y, float alpha, const float* x, size_t n);
void gelu(const float* x, float* y, size_t n);
void gelu_grad(const float* x, const float* dy, float* dx, size_t n);
void softmax_rows(const float* x, float* y, int rows, int cols);
// gamma/beta may be null (treated as 1 / 0). Optional rstd[rows] and
// xhat[rows*cols] outputs feed the backward pass.
void layer_norm_rows(const float* x, float* y, int rows, int cols,
                     const float* gamma, const float* beta, float eps,
                     float* rstd = nullptr, float* xhat = nullptr);
}  // namespace serial

// OpenMP twins, same contracts and same per-element arithmetic order.
namespace par {
void matmul(const float* a, const float* b, float* c, int m, int k, int n);
void matmul_at_b(const float* a, const float* b, float* c, int m, int k, int n);
void matmul_a_bt(const float* a, const float* b, float* c, int m, int k, int n);
void add(const float* a, const float* b, float* y, size_t n);
void sub(const float* a, const float* b, float* y, size_t n);
void mul(const float* a, const float* b, float* y, size_t n);
void scale(const float* x, float s, float* y, size_t n);
void axpy(float* y, float alpha, const float* x, size_t n);
void gelu(const float* x, float* y, size_t n);
void gelu_grad(const float* x, const float* dy, float* dx, size_t n);
void softmax_rows(const float* x, float* y, int rows, int cols);
void layer_norm_rows(const float* x, float* y, int rows, int cols,
                     const float* gamma, const float* beta, float eps,
                     float* rstd = nullptr, float* xhat = nullptr);
}  // namespace par

// Dispatching entry points; pick par iff max_threads() > 1.
void matmul(const float* a, const float* b, float* c, int m, int k, int n);
void matmul_at_b(const float* a, const float* b, float* c, int m, int k, int n);
void matmul_a_bt(const float* a, const float* b, float* c, int m, int k, int n);
void add(const float* a, const float* b, float* y, size_t n);
void sub(const float* a, const float* b, float* y, size_t n);
void mul(const float* a, const float* b, float* y, size_t n);
void scale(const float* x, float s, float* y, size_t n);
void axpy(float* y, float alpha, const float* x, size_t n);
void gelu(const float* x, float* y, size_t n);
void gelu_grad(const float* x, const float* dy, float* dx, size_t n);
void softmax_rows(const float* x, float* y, int rows, int cols);
void layer_norm_rows(const float* x, float* y, int rows, int cols,
                     const float* gamma, const float* beta, float eps,
                     float* rstd = nullptr, float* xhat = nullptr);

float gelu_scalar(float x);
float gelu_grad_scalar(float x);

}  // namespace ditcache::kernels
