// Throughput comparison of the serial reference kernels vs the OpenMP
// variants, with an on-the-spot bit-equality check. Usage:
//   kernel_bench [--threads N] [--repeat R]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "ditcache/kernels.hpp"
#include "ditcache/rng.hpp"

namespace {

using ditcache::Rng;
namespace kernels = ditcache::kernels;

std::vector<float> random_vec(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = rng.normal();
  return v;
}

double time_ms(int repeat, const std::function<void()>& fn) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeat; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeat;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void report(const char* name, double serial_ms, double par_ms, double work,
            const char* unit, bool exact) {
  std::printf("%-18s serial %9.3f ms  openmp %9.3f ms  speedup %5.2fx  %8.2f %s  bit-equal: %s\n",
              name, serial_ms, par_ms, serial_ms / par_ms, work / (par_ms * 1e-3) / 1e9,
              unit, exact ? "yes" : "NO");
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0, repeat = 5;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--threads") && i + 1 < argc) threads = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--repeat") && i + 1 < argc) repeat = std::atoi(argv[++i]);
    else {
      std::fprintf(stderr, "usage: kernel_bench [--threads N] [--repeat R]\n");
      return 2;
    }
  }

  std::printf("kernel_bench: threads=%d (0=auto), repeat=%d\n", threads, repeat);

  {
    const int m = 256, k = 256, n = 256;
    const auto a = random_vec(static_cast<size_t>(m) * k, 1);
    const auto b = random_vec(static_cast<size_t>(k) * n, 2);
    std::vector<float> cs(static_cast<size_t>(m) * n), cp(cs.size());
    const double serial_ms =
        time_ms(repeat, [&] { kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n); });
    kernels::set_max_threads(threads);
    const double par_ms =
        time_ms(repeat, [&] { kernels::par::matmul(a.data(), b.data(), cp.data(), m, k, n); });
    report("matmul 256^3", serial_ms, par_ms, 2.0 * m * k * n, "GFLOP/s",
           bit_equal(cs, cp));
  }
  {
    const size_t n = size_t{1} << 22;
    const auto x = random_vec(n, 3);
    std::vector<float> ys(n), yp(n);
    const double serial_ms = time_ms(repeat, [&] { kernels::serial::gelu(x.data(), ys.data(), n); });
    const double par_ms = time_ms(repeat, [&] { kernels::par::gelu(x.data(), yp.data(), n); });
    report("gelu 4M", serial_ms, par_ms, static_cast<double>(n), "Gelem/s",
           bit_equal(ys, yp));
  }
  {
    const int rows = 1024, cols = 512;
    const auto x = random_vec(static_cast<size_t>(rows) * cols, 4);
    std::vector<float> ys(x.size()), yp(x.size());
    const double serial_ms = time_ms(
        repeat, [&] { kernels::serial::softmax_rows(x.data(), ys.data(), rows, cols); });
    const double par_ms =
        time_ms(repeat, [&] { kernels::par::softmax_rows(x.data(), yp.data(), rows, cols); });
    report("softmax 1024x512", serial_ms, par_ms, static_cast<double>(rows) * cols,
           "Gelem/s", bit_equal(ys, yp));
  }
  {
    const int rows = 1024, cols = 512;
    const auto x = random_vec(static_cast<size_t>(rows) * cols, 5);
    const auto gamma = random_vec(static_cast<size_t>(cols), 6);
    const auto beta = random_vec(static_cast<size_t>(cols), 7);
    std::vector<float> ys(x.size()), yp(x.size());
    const double serial_ms = time_ms(repeat, [&] {
      kernels::serial::layer_norm_rows(x.data(), ys.data(), rows, cols, gamma.data(),
                                       beta.data(), 1e-5f);
    });
    const double par_ms = time_ms(repeat, [&] {
      kernels::par::layer_norm_rows(x.data(), yp.data(), rows, cols, gamma.data(),
                                    beta.data(), 1e-5f);
    });
    report("layernorm 1024x512", serial_ms, par_ms, static_cast<double>(rows) * cols,
           "Gelem/s", bit_equal(ys, yp));
  }
  return 0;
}
