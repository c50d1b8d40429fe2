#pragma once

#include <map>
#include <string>
#include <vector>

#include "ditcache/executor.hpp"
#include "ditcache/toy_task.hpp"

namespace ditcache {

struct EvalSample {
  Tensor noise;
  Tensor cond;
};

// Held-out synthetic inputs from the bench-data / bench-noise substreams,
// disjoint from the training and calibration streams.
std::vector<EvalSample> make_eval_samples(const ModelConfig& cfg, int count,
                                          uint64_t seed, int max_components = 3,
                                          float amp_min = 0.5f, float amp_max = 1.5f);

struct BenchRow {
  int nfe = 0;
  bool baseline = false;
  double alpha = 0.0;  // meaningful only when !baseline
  double cached_fraction = 0.0;
  double compute_fraction = 1.0;
  double mean_wall_ms = 0.0;
  double speedup = 1.0;  // baseline mean / this row's mean, same nfe
  double mean_rel_l2 = 0.0, mean_rel_l1 = 0.0, mean_max_abs = 0.0;
  uint64_t sublayer_computes = 0;  // per run
};

struct BenchReport {
  nlohmann::json config;  // echoed into every emitted artifact
  std::vector<BenchRow> rows;

  std::string to_csv() const;
  std::string to_table() const;
};

// Threshold sweep: per nfe, an uncached baseline row plus one row per
// alpha, with divergence measured against the same-sample same-nfe
// baseline outputs. Rows sorted by (nfe desc, cached fraction asc). All
// timed runs are pinned to one kernel thread after a discarded warm-up.
BenchReport bench_sweep(const Weights& w, const std::vector<EvalSample>& samples,
                        const std::vector<int>& nfe_list,
                        const std::vector<double>& alpha_list, Strategy strategy,
                        int max_consecutive,
                        const std::map<int, ErrorProfile>& profiles,
                        const SamplerConfig& base);

struct CompareArm {
  std::string name;
  int nfe = 0;
  int compute_steps_per_layer = 0;
  uint64_t sublayer_computes = 0;
  double mean_wall_ms = 0.0;
  double mean_rel_l2 = 0.0, mean_rel_l1 = 0.0, mean_max_abs = 0.0;
};

struct CompareReport {
  nlohmann::json config;
  int nfe = 0;
  int cached_per_layer = 0;
  double baseline_mean_wall_ms = 0.0;  // uncached at nfe (the reference)
  CompareArm cached_arm;               // schedule at nfe
  CompareArm reduced_arm;              // uncached at nfe - c
  bool compute_parity = false;

  std::string to_csv() const;
  std::string to_table() const;
};

// Caching at nfe with c cached steps per layer vs plain nfe-c inference:
// equal compute, different trajectories. The schedule must cache the same
// count in every layer or the comparison is ill-defined.
CompareReport compare_cache_vs_reduced(const Weights& w,
                                       const std::vector<EvalSample>& samples,
                                       int nfe, const CacheSchedule& schedule,
                                       const SamplerConfig& base);

}  // namespace ditcache
