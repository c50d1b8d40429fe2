#include "ditcache/sampler.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "ditcache/errors.hpp"
#include "ditcache/kernels.hpp"
#include "ditcache/rng.hpp"
#include "ditcache/version.hpp"

namespace ditcache {

void SamplerConfig::validate() const {
  if (nfe < 1) throw DomainError("sampler: nfe must be >= 1, got " + std::to_string(nfe));
  if (!(sway_coeff >= -1.0 && sway_coeff <= 1.0)) {
    throw DomainError("sampler: sway coefficient " + std::to_string(sway_coeff) +
                      " outside [-1, 1]");
  }
  if (!std::isfinite(cfg_strength)) throw DomainError("sampler: cfg strength not finite");
}

nlohmann::json RunStats::to_json() const {
  auto per_layer = [](const std::vector<int>& v) {
    nlohmann::json j = nlohmann::json::object();
    for (size_t i = 0; i < v.size(); ++i) {
      j[layer_key(layer_from_index(static_cast<int>(i)))] = v[i];
    }
    return j;
  };
  return {
      {"nfe", nfe},
      {"seed", seed},
      {"cfg_strength", cfg_strength},
      {"sway_coeff", sway_coeff},
      {"sublayer_computes", sublayer_computes},
      {"cache_hits", cache_hits},
      {"compute_steps_per_layer", per_layer(compute_steps_per_layer)},
      {"cached_steps_per_layer", per_layer(cached_steps_per_layer)},
      {"wall_ms", wall_ms},
      {"schedule_fingerprint", schedule_fingerprint},
      {"cfg_form", cfg_form},
      {"rng_algorithm", rng_algorithm},
      {"tool_version", tool_version},
  };
}

std::vector<double> sway_timesteps(int nfe, double s) {
  if (nfe < 1) throw DomainError("sway_timesteps: nfe must be >= 1");
  if (!(s >= -1.0 && s <= 1.0)) {
    throw DomainError("sway_timesteps: coefficient " + std::to_string(s) +
                      " outside [-1, 1]");
  }
  std::vector<double> t(static_cast<size_t>(nfe) + 1);
  t[0] = 0.0;
  t[static_cast<size_t>(nfe)] = 1.0;  // cos(pi/2) is not exactly 0 in fp; pin both ends
  for (int i = 1; i < nfe; ++i) {
    const double u = static_cast<double>(i) / nfe;
    t[static_cast<size_t>(i)] = u + s * (std::cos(M_PI * u / 2.0) - 1.0 + u);
  }
  for (int i = 0; i < nfe; ++i) {
    if (!(t[static_cast<size_t>(i + 1)] > t[static_cast<size_t>(i)])) {
      throw DomainError("sway_timesteps: grid not strictly increasing at i=" +
                        std::to_string(i));
    }
  }
  return t;
}

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double w) {
  require_same_shape(v_cond, v_uncond, "cfg_velocity");
  if (w == 1.0) return v_cond;
  if (w == 0.0) return v_uncond;
  const float fw = static_cast<float>(w);
  Tensor out = Tensor::zeros(v_cond.shape);
  for (size_t i = 0; i < out.data.size(); ++i) {
    const float vu = v_uncond.data[i];
    out.data[i] = vu + fw * (v_cond.data[i] - vu);
  }
  check_finite(out, "cfg_velocity output");
  return out;
}

std::pair<Tensor, RunStats> euler_integrate(const Weights& w, const Tensor& x0,
                                            const Tensor& cond,
                                            const SamplerConfig& cfg,
                                            const CacheSchedule* schedule,
                                            CacheState* cache,
                                            const SublayerTap* tap) {
  cfg.validate();
  const int depth = w.config.depth;
  if (schedule) {
    if (schedule->nfe != cfg.nfe) {
      throw DomainError("euler_integrate: schedule nfe " + std::to_string(schedule->nfe) +
                        " != sampler nfe " + std::to_string(cfg.nfe));
    }
    if (schedule->depth() != depth) {
      throw DomainError("euler_integrate: schedule depth " +
                        std::to_string(schedule->depth()) + " != model depth " +
                        std::to_string(depth));
    }
    schedule->validate();
  }
  const std::vector<double> ts = sway_timesteps(cfg.nfe, cfg.sway_coeff);
  const Tensor zero_cond = Tensor::zeros(cond.shape);

  CacheState local(depth);
  CacheState* cs = cache ? cache : &local;
  const uint64_t hits0 = cs->hits(), computes0 = cs->computes();

  Tensor x = x0;
  const auto t_start = std::chrono::steady_clock::now();
  for (int i = 0; i < cfg.nfe; ++i) {
    const float t = static_cast<float>(ts[static_cast<size_t>(i)]);
    const float dt = static_cast<float>(ts[static_cast<size_t>(i + 1)] -
                                        ts[static_cast<size_t>(i)]);
    Tensor v_cond, v_uncond;
    if (schedule) {
      const StepCachePolicy policy{schedule, i};
      v_cond = model_forward(w, x, t, cond, Branch::Cond, policy, *cs, tap);
      v_uncond = model_forward(w, x, t, zero_cond, Branch::Uncond, policy, *cs, tap);
    } else {
      v_cond = model_forward_reference(w, x, t, cond, Branch::Cond, tap);
      v_uncond = model_forward_reference(w, x, t, zero_cond, Branch::Uncond, tap);
    }
    const Tensor v = cfg_velocity(v_cond, v_uncond, cfg.cfg_strength);
    axpy_inplace(x, dt, v);
  }
  const auto t_end = std::chrono::steady_clock::now();

  RunStats stats;
  stats.nfe = cfg.nfe;
  stats.seed = cfg.seed;
  stats.cfg_strength = cfg.cfg_strength;
  stats.sway_coeff = cfg.sway_coeff;
  stats.rng_algorithm = Rng::kAlgorithm;
  stats.tool_version = kToolVersion;
  stats.wall_ms =
      std::chrono::duration<double, std::milli>(t_end - t_start).count();
  if (schedule) {
    const ScheduleStats ss = schedule_stats(*schedule);
    stats.compute_steps_per_layer = ss.compute_per_layer;
    stats.cached_steps_per_layer = ss.cached_per_layer;
    stats.sublayer_computes = cs->computes() - computes0;
    stats.cache_hits = cs->hits() - hits0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx",
                  static_cast<unsigned long long>(schedule->fingerprint()));
    stats.schedule_fingerprint = buf;
  } else {
    stats.compute_steps_per_layer.assign(static_cast<size_t>(2 * depth), cfg.nfe);
    stats.cached_steps_per_layer.assign(static_cast<size_t>(2 * depth), 0);
    stats.sublayer_computes =
        2ull * static_cast<uint64_t>(cfg.nfe) * static_cast<uint64_t>(2 * depth);
    stats.cache_hits = 0;
  }
  return {std::move(x), stats};
}

}  // namespace ditcache
