#include "ditcache/executor.hpp"

#include <algorithm>
#include <cmath>

#include "ditcache/errors.hpp"

namespace ditcache {

nlohmann::json Divergence::to_json() const {
  return {{"rel_l2", rel_l2}, {"rel_l1", rel_l1}, {"max_abs", max_abs}};
}

Divergence divergence(const Tensor& x_cached, const Tensor& x_ref) {
  require_same_shape(x_cached, x_ref, "divergence");
  double diff2 = 0.0, ref2 = 0.0, diff1 = 0.0, ref1 = 0.0, dmax = 0.0;
  for (size_t i = 0; i < x_ref.data.size(); ++i) {
    const double d = static_cast<double>(x_cached.data[i]) - x_ref.data[i];
    const double r = x_ref.data[i];
    diff2 += d * d;
    ref2 += r * r;
    diff1 += std::fabs(d);
    ref1 += std::fabs(r);
    dmax = std::max(dmax, std::fabs(d));
  }
  if (ref1 < 1e-12 || std::sqrt(ref2) < 1e-12) {
    throw DegenerateDenominatorError("divergence: zero-norm reference tensor");
  }
  return {std::sqrt(diff2) / std::sqrt(ref2), diff1 / ref1, dmax};
}

std::pair<Tensor, RunStats> cached_infer(const Weights& w, const Tensor& noise,
                                         const Tensor& cond,
                                         const SamplerConfig& cfg,
                                         const CacheSchedule* schedule) {
  CacheState cache(w.config.depth);
  return euler_integrate(w, noise, cond, cfg, schedule, &cache);
}

}  // namespace ditcache
