#include "ditcache/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cmath>

namespace ditcache::kernels {

namespace {

std::atomic<int> g_max_threads{0};  // 0 = OpenMP default

// Work below these sizes is not worth forking a team for. The cutoff only
// affects which twin runs, never the result.
constexpr long long kMatmulParCutoff = 1 << 15;
constexpr size_t kElemwiseParCutoff = 1 << 14;

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;

inline void softmax_one_row(const float* x, float* y, int cols) {
  float mx = x[0];
  for (int j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += static_cast<double>(y[j]);
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < cols; ++j) {
    y[j] = static_cast<float>(static_cast<double>(y[j]) * inv);
  }
}

inline void layer_norm_one_row(const float* x, float* y, int cols,
                               const float* gamma, const float* beta, float eps,
                               float* rstd, float* xhat) {
  double mean = 0.0;
  for (int j = 0; j < cols; ++j) mean += static_cast<double>(x[j]);
  mean /= cols;
  double var = 0.0;
  for (int j = 0; j < cols; ++j) {
    const double d = static_cast<double>(x[j]) - mean;
    var += d * d;
  }
  var /= cols;
  const double r = 1.0 / std::sqrt(var + static_cast<double>(eps));
  if (rstd) *rstd = static_cast<float>(r);
  for (int j = 0; j < cols; ++j) {
    const float h = static_cast<float>((static_cast<double>(x[j]) - mean) * r);
    if (xhat) xhat[j] = h;
    float v = h;
    if (gamma) v *= gamma[j];
    if (beta) v += beta[j];
    y[j] = v;
  }
}

}  // namespace

void set_max_threads(int n) { g_max_threads.store(n <= 0 ? 0 : n); }

int max_threads() {
  const int n = g_max_threads.load();
  return n > 0 ? n : omp_get_max_threads();
}

float gelu_scalar(float x) {
  const float u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5f * x * (1.0f + std::tanh(u));
}

float gelu_grad_scalar(float x) {
  const float u = kGeluC * (x + kGeluA * x * x * x);
  const float t = std::tanh(u);
  const float du = kGeluC * (1.0f + 3.0f * kGeluA * x * x);
  return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
}

// ---------------------------------------------------------------------------
// Serial reference kernels
// ---------------------------------------------------------------------------

namespace serial {

void matmul(const float* a, const float* b, float* c, int m, int k, int n) {
  // i-k-j accumulation: per output element the k-sum runs in ascending
  // order, matching the naive triple loop bit for bit.
  for (int i = 0; i < m; ++i) {
    float* __restrict ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0f;
    const float* ai = a + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const float al = ai[l];
      const float* __restrict bl = b + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += al * bl[j];
    }
  }
}

void matmul_at_b(const float* a, const float* b, float* c, int m, int k, int n) {
  // c = a^T b with a stored [k x m], b stored [k x n].
  for (int i = 0; i < m; ++i) {
    float* __restrict ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0f;
    for (int l = 0; l < k; ++l) {
      const float al = a[static_cast<size_t>(l) * m + i];
      const float* __restrict bl = b + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += al * bl[j];
    }
  }
}

void matmul_a_bt(const float* a, const float* b, float* c, int m, int k, int n) {
  // c = a b^T with a stored [m x k], b stored [n x k].
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* bj = b + static_cast<size_t>(j) * k;
      float s = 0.0f;
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  }
}

void add(const float* a, const float* b, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void scale(const float* x, float s, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] * s;
}

void axpy(float* y, float alpha, const float* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gelu(const float* x, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_grad(const float* x, const float* dy, float* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] = dy[i] * gelu_grad_scalar(x[i]);
}

void softmax_rows(const float* x, float* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    softmax_one_row(x + static_cast<size_t>(i) * cols,
                    y + static_cast<size_t>(i) * cols, cols);
  }
}

void layer_norm_rows(const float* x, float* y, int rows, int cols,
                     const float* gamma, const float* beta, float eps,
                     float* rstd, float* xhat) {
  for (int i = 0; i < rows; ++i) {
    const size_t off = static_cast<size_t>(i) * cols;
    layer_norm_one_row(x + off, y + off, cols, gamma, beta, eps,
                       rstd ? rstd + i : nullptr, xhat ? xhat + off : nullptr);
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP twins. Parallel loops split output rows/elements only; each output
// element sees exactly the serial arithmetic sequence.
// ---------------------------------------------------------------------------

namespace par {

void matmul(const float* a, const float* b, float* c, int m, int k, int n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int i = 0; i < m; ++i) {
    float* __restrict ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0f;
    const float* ai = a + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const float al = ai[l];
      const float* __restrict bl = b + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += al * bl[j];
    }
  }
}

void matmul_at_b(const float* a, const float* b, float* c, int m, int k, int n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int i = 0; i < m; ++i) {
    float* __restrict ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0f;
    for (int l = 0; l < k; ++l) {
      const float al = a[static_cast<size_t>(l) * m + i];
      const float* __restrict bl = b + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += al * bl[j];
    }
  }
}

void matmul_a_bt(const float* a, const float* b, float* c, int m, int k, int n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* bj = b + static_cast<size_t>(j) * k;
      float s = 0.0f;
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  }
}

void add(const float* a, const float* b, float* y, size_t n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* y, size_t n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* y, size_t n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] = a[i] * b[i];
}

void scale(const float* x, float s, float* y, size_t n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] = x[i] * s;
}

void axpy(float* y, float alpha, const float* x, size_t n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] += alpha * x[i];
}

void gelu(const float* x, float* y, size_t n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_grad(const float* x, const float* dy, float* dx, size_t n) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    dx[i] = dy[i] * gelu_grad_scalar(x[i]);
  }
}

void softmax_rows(const float* x, float* y, int rows, int cols) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int i = 0; i < rows; ++i) {
    softmax_one_row(x + static_cast<size_t>(i) * cols,
                    y + static_cast<size_t>(i) * cols, cols);
  }
}

void layer_norm_rows(const float* x, float* y, int rows, int cols,
                     const float* gamma, const float* beta, float eps,
                     float* rstd, float* xhat) {
  const int nt = kernels::max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int i = 0; i < rows; ++i) {
    const size_t off = static_cast<size_t>(i) * cols;
    layer_norm_one_row(x + off, y + off, cols, gamma, beta, eps,
                       rstd ? rstd + i : nullptr, xhat ? xhat + off : nullptr);
  }
}

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

namespace {
inline bool par_enabled() { return max_threads() > 1; }
}  // namespace

void matmul(const float* a, const float* b, float* c, int m, int k, int n) {
  const long long work = 1ll * m * k * n;
  if (par_enabled() && work >= kMatmulParCutoff) {
    par::matmul(a, b, c, m, k, n);
  } else {
    serial::matmul(a, b, c, m, k, n);
  }
}

void matmul_at_b(const float* a, const float* b, float* c, int m, int k, int n) {
  const long long work = 1ll * m * k * n;
  if (par_enabled() && work >= kMatmulParCutoff) {
    par::matmul_at_b(a, b, c, m, k, n);
  } else {
    serial::matmul_at_b(a, b, c, m, k, n);
  }
}

void matmul_a_bt(const float* a, const float* b, float* c, int m, int k, int n) {
  const long long work = 1ll * m * k * n;
  if (par_enabled() && work >= kMatmulParCutoff) {
    par::matmul_a_bt(a, b, c, m, k, n);
  } else {
    serial::matmul_a_bt(a, b, c, m, k, n);
  }
}

void add(const float* a, const float* b, float* y, size_t n) {
  if (par_enabled() && n >= kElemwiseParCutoff) par::add(a, b, y, n);
  else serial::add(a, b, y, n);
}

void sub(const float* a, const float* b, float* y, size_t n) {
  if (par_enabled() && n >= kElemwiseParCutoff) par::sub(a, b, y, n);
  else serial::sub(a, b, y, n);
}

void mul(const float* a, const float* b, float* y, size_t n) {
  if (par_enabled() && n >= kElemwiseParCutoff) par::mul(a, b, y, n);
  else serial::mul(a, b, y, n);
}

void scale(const float* x, float s, float* y, size_t n) {
  if (par_enabled() && n >= kElemwiseParCutoff) par::scale(x, s, y, n);
  else serial::scale(x, s, y, n);
}

void axpy(float* y, float alpha, const float* x, size_t n) {
  if (par_enabled() && n >= kElemwiseParCutoff) par::axpy(y, alpha, x, n);
  else serial::axpy(y, alpha, x, n);
}

void gelu(const float* x, float* y, size_t n) {
  if (par_enabled() && n >= kElemwiseParCutoff) par::gelu(x, y, n);
  else serial::gelu(x, y, n);
}

void gelu_grad(const float* x, const float* dy, float* dx, size_t n) {
  if (par_enabled() && n >= kElemwiseParCutoff) par::gelu_grad(x, dy, dx, n);
  else serial::gelu_grad(x, dy, dx, n);
}

void softmax_rows(const float* x, float* y, int rows, int cols) {
  if (par_enabled() && rows > 1 && 1ll * rows * cols >= kElemwiseParCutoff) {
    par::softmax_rows(x, y, rows, cols);
  } else {
    serial::softmax_rows(x, y, rows, cols);
  }
}

void layer_norm_rows(const float* x, float* y, int rows, int cols,
                     const float* gamma, const float* beta, float eps,
                     float* rstd, float* xhat) {
  if (par_enabled() && rows > 1 && 1ll * rows * cols >= kElemwiseParCutoff) {
    par::layer_norm_rows(x, y, rows, cols, gamma, beta, eps, rstd, xhat);
  } else {
    serial::layer_norm_rows(x, y, rows, cols, gamma, beta, eps, rstd, xhat);
  }
}

}  // namespace ditcache::kernels
