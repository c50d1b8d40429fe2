#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ditcache/model.hpp"
#include "ditcache/schedule.hpp"
#include "ditcache/tensor.hpp"

namespace ditcache {

struct SamplerConfig {
  int nfe = 32;
  double cfg_strength = 2.0;
  double sway_coeff = -1.0;
  uint64_t seed = 0;

  void validate() const;  // throws DomainError
};

// One inference run's accounting. cache_hits + sublayer_computes always
// equals 2 branches x nfe steps x 2*depth layers.
struct RunStats {
  int nfe = 0;
  uint64_t seed = 0;
  double cfg_strength = 0.0;
  double sway_coeff = 0.0;
  uint64_t sublayer_computes = 0;
  uint64_t cache_hits = 0;
  std::vector<int> compute_steps_per_layer;  // [2*depth], schedule-derived
  std::vector<int> cached_steps_per_layer;
  double wall_ms = 0.0;
  std::string schedule_fingerprint = "none";
  std::string cfg_form = "uncond + w*(cond - uncond)";
  std::string rng_algorithm;
  std::string tool_version;

  nlohmann::json to_json() const;
};

// Warped grid t_i = u_i + s*(cos(pi*u_i/2) - 1 + u_i), u_i = i/nfe.
// nfe+1 strictly increasing values; endpoints pinned to exactly 0 and 1.
std::vector<double> sway_timesteps(int nfe, double s);

// v_uncond + w*(v_cond - v_uncond); w == 1 and w == 0 return exact copies.
Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double w);

// Euler ODE loop over the sway grid with CFG. Null schedule = hook-free
// reference path for both branches. `cache` may be null (one is created
// internally when the schedule needs it); `tap` observes computed sublayer
// outputs. wall_ms covers the integration loop only.
std::pair<Tensor, RunStats> euler_integrate(const Weights& w, const Tensor& x0,
                                            const Tensor& cond,
                                            const SamplerConfig& cfg,
                                            const CacheSchedule* schedule,
                                            CacheState* cache = nullptr,
                                            const SublayerTap* tap = nullptr);

}  // namespace ditcache
