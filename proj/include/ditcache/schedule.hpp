#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ditcache/layers.hpp"
#include "ditcache/tensor.hpp"

namespace ditcache {

// How per-layer error curves turn into per-layer masks.
enum class Strategy { Independent, AttnOnly, FfnOnly, UnifiedAttnBase, UnifiedFfnBase };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

// Averaged L1 relative errors between consecutive timesteps, one curve per
// sublayer. errors[layer_index] holds nfe-1 entries; entry j is the
// transition from step j to step j+1.
struct ErrorProfile {
  int nfe = 0;
  int sample_count = 0;
  std::vector<std::vector<double>> errors;  // [2*depth][nfe-1]

  int depth() const { return static_cast<int>(errors.size()) / 2; }
  const std::vector<double>& layer_errors(const LayerId& id) const {
    return errors[static_cast<size_t>(layer_index(id))];
  }
  void validate() const;

  nlohmann::json to_json() const;
  static ErrorProfile from_json(const nlohmann::json& j);
};

// Per-layer compute/cache plan over the sampler's steps. true = cached.
struct CacheSchedule {
  int nfe = 0;
  double alpha = 0.0;
  Strategy strategy = Strategy::UnifiedAttnBase;
  int max_consecutive = 3;
  std::vector<std::vector<uint8_t>> masks;  // [2*depth][nfe]

  int depth() const { return static_cast<int>(masks.size()) / 2; }
  bool cached(const LayerId& id, int step) const {
    return masks[static_cast<size_t>(layer_index(id))][static_cast<size_t>(step)] != 0;
  }
  void validate() const;  // step-0 compute + run cap, every layer

  nlohmann::json to_json() const;
  static CacheSchedule from_json(const nlohmann::json& j);
  // FNV-1a over the canonical JSON dump; identifies the schedule in RunStats.
  uint64_t fingerprint() const;
};

// sum|curr - prev| / sum|prev|, accumulated in double. Throws
// DegenerateDenominatorError when sum|prev| < 1e-12.
double l1_relative_error(const Tensor& h_curr, const Tensor& h_prev);

// Threshold + greedy run-length enforcement. errors has nfe-1 entries;
// step j+1 is a candidate iff errors[j] < alpha; step 0 always computes;
// a compute step is forced after max_consecutive consecutive caches.
std::vector<uint8_t> build_layer_mask(const std::vector<double>& errors,
                                      double alpha, int max_consecutive);

CacheSchedule apply_strategy(const ErrorProfile& profile, double alpha,
                             int max_consecutive, Strategy strategy);

struct ScheduleStats {
  std::vector<int> cached_per_layer;
  std::vector<int> compute_per_layer;
  double cached_fraction = 0.0;
  double compute_fraction = 1.0;
};

ScheduleStats schedule_stats(const CacheSchedule& schedule);

// Same mask for every layer with exactly `cached_per_layer` cached steps,
// laid out as maximal runs from step 1 under the cap. Used by the
// cache-vs-reduced-NFE ablation, which needs a uniform cached count.
CacheSchedule uniform_cached_schedule(int depth, int nfe, int cached_per_layer,
                                      int max_consecutive);

// Smallest alpha (among the profile's distinct error values) whose schedule
// has cached_fraction closest to the target. Ties prefer the smaller alpha.
double alpha_for_cached_fraction(const ErrorProfile& profile, Strategy strategy,
                                 int max_consecutive, double target_fraction);

}  // namespace ditcache
