#pragma once

#include <utility>

#include <json.hpp>

#include "ditcache/sampler.hpp"

namespace ditcache {

// Output-space distance of a cached run from its uncached reference. A
// proxy for quality at this scale, not a perceptual metric.
struct Divergence {
  double rel_l2 = 0.0;
  double rel_l1 = 0.0;
  double max_abs = 0.0;

  nlohmann::json to_json() const;
};

// Throws DegenerateDenominatorError when the reference norm is ~0.
Divergence divergence(const Tensor& x_cached, const Tensor& x_ref);

// euler_integrate under a schedule (null = uncached baseline) with a fresh
// private cache and fully populated stats.
std::pair<Tensor, RunStats> cached_infer(const Weights& w, const Tensor& noise,
                                         const Tensor& cond,
                                         const SamplerConfig& cfg,
                                         const CacheSchedule* schedule);

}  // namespace ditcache
