#include "ditcache/bench.hpp"

#include <algorithm>
#include <cstdio>

#include "ditcache/errors.hpp"
#include "ditcache/kernels.hpp"
#include "ditcache/version.hpp"

namespace ditcache {

namespace {

// Timed runs use exactly one kernel thread; restored on scope exit.
struct SingleThreadGuard {
  int saved;
  SingleThreadGuard() : saved(kernels::max_threads()) { kernels::set_max_threads(1); }
  ~SingleThreadGuard() { kernels::set_max_threads(saved); }
};

struct ArmMeasurement {
  double mean_wall_ms = 0.0;
  double mean_rel_l2 = 0.0, mean_rel_l1 = 0.0, mean_max_abs = 0.0;
  RunStats first_stats;
  std::vector<Tensor> outputs;
};

// One warm-up run on samples[0] (discarded), then one timed run per
// sample. refs, when given, supply per-sample divergence references.
ArmMeasurement measure(const Weights& w, const std::vector<EvalSample>& samples,
                       const SamplerConfig& cfg, const CacheSchedule* schedule,
                       const std::vector<Tensor>* refs, bool keep_outputs) {
  ArmMeasurement m;
  cached_infer(w, samples[0].noise, samples[0].cond, cfg, schedule);
  bool first = true;
  for (size_t i = 0; i < samples.size(); ++i) {
    auto [out, stats] = cached_infer(w, samples[i].noise, samples[i].cond, cfg, schedule);
    m.mean_wall_ms += stats.wall_ms;
    if (first) {
      m.first_stats = stats;
      first = false;
    }
    if (refs) {
      const Divergence d = divergence(out, (*refs)[i]);
      m.mean_rel_l2 += d.rel_l2;
      m.mean_rel_l1 += d.rel_l1;
      m.mean_max_abs += d.max_abs;
    }
    if (keep_outputs) m.outputs.push_back(std::move(out));
  }
  const double n = static_cast<double>(samples.size());
  m.mean_wall_ms /= n;
  m.mean_rel_l2 /= n;
  m.mean_rel_l1 /= n;
  m.mean_max_abs /= n;
  return m;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::vector<EvalSample> make_eval_samples(const ModelConfig& cfg, int count,
                                          uint64_t seed, int max_components,
                                          float amp_min, float amp_max) {
  if (count < 1) throw DomainError("eval samples: count must be >= 1");
  std::vector<EvalSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng data_rng = Rng::substream(seed, "bench-data", static_cast<uint64_t>(i));
    Rng noise_rng = Rng::substream(seed, "bench-noise", static_cast<uint64_t>(i));
    ToySample s = gen_sample(cfg, data_rng, max_components, amp_min, amp_max);
    EvalSample e;
    e.cond = std::move(s.cond);
    e.noise = Tensor::randn({cfg.seq_len, cfg.in_dim}, noise_rng);
    out.push_back(std::move(e));
  }
  return out;
}

BenchReport bench_sweep(const Weights& w, const std::vector<EvalSample>& samples,
                        const std::vector<int>& nfe_list,
                        const std::vector<double>& alpha_list, Strategy strategy,
                        int max_consecutive,
                        const std::map<int, ErrorProfile>& profiles,
                        const SamplerConfig& base) {
  if (samples.empty()) throw DomainError("bench: need at least one eval sample");
  if (nfe_list.empty()) throw DomainError("bench: empty nfe list");
  base.validate();

  BenchReport report;
  report.config = {
      {"tool_version", kToolVersion},
      {"rng_algorithm", Rng::kAlgorithm},
      {"strategy", to_string(strategy)},
      {"max_consecutive", max_consecutive},
      {"nfe_list", nfe_list},
      {"alpha_list", alpha_list},
      {"cfg_strength", base.cfg_strength},
      {"sway_coeff", base.sway_coeff},
      {"seed", base.seed},
      {"eval_samples", samples.size()},
      {"model_config", w.config.to_json()},
      {"weights_checksum", weights_checksum(w)},
      {"timing_threads", 1},
  };

  SingleThreadGuard guard;
  for (const int nfe : nfe_list) {
    const auto it = profiles.find(nfe);
    if (it == profiles.end()) {
      throw DomainError("bench: no calibration profile for nfe " + std::to_string(nfe) +
                        "; run calibrate at that nfe first");
    }
    const ErrorProfile& profile = it->second;
    profile.validate();
    if (profile.nfe != nfe) {
      throw DomainError("bench: profile nfe " + std::to_string(profile.nfe) +
                        " does not match requested nfe " + std::to_string(nfe));
    }
    if (profile.depth() != w.config.depth) {
      throw DomainError("bench: profile depth " + std::to_string(profile.depth()) +
                        " does not match model depth " + std::to_string(w.config.depth));
    }
    SamplerConfig cfg = base;
    cfg.nfe = nfe;

    const ArmMeasurement baseline = measure(w, samples, cfg, nullptr, nullptr, true);
    BenchRow brow;
    brow.nfe = nfe;
    brow.baseline = true;
    brow.mean_wall_ms = baseline.mean_wall_ms;
    brow.sublayer_computes = baseline.first_stats.sublayer_computes;
    report.rows.push_back(brow);

    for (const double alpha : alpha_list) {
      const CacheSchedule schedule =
          apply_strategy(profile, alpha, max_consecutive, strategy);
      const ScheduleStats ss = schedule_stats(schedule);
      const ArmMeasurement run =
          measure(w, samples, cfg, &schedule, &baseline.outputs, false);
      BenchRow row;
      row.nfe = nfe;
      row.alpha = alpha;
      row.cached_fraction = ss.cached_fraction;
      row.compute_fraction = ss.compute_fraction;
      row.mean_wall_ms = run.mean_wall_ms;
      row.speedup = baseline.mean_wall_ms / run.mean_wall_ms;
      row.mean_rel_l2 = run.mean_rel_l2;
      row.mean_rel_l1 = run.mean_rel_l1;
      row.mean_max_abs = run.mean_max_abs;
      row.sublayer_computes = run.first_stats.sublayer_computes;
      report.rows.push_back(row);
    }
  }

  std::sort(report.rows.begin(), report.rows.end(),
            [](const BenchRow& a, const BenchRow& b) {
              if (a.nfe != b.nfe) return a.nfe > b.nfe;
              if (a.cached_fraction != b.cached_fraction) {
                return a.cached_fraction < b.cached_fraction;
              }
              if (a.baseline != b.baseline) return a.baseline;
              return a.alpha < b.alpha;
            });
  return report;
}

std::string BenchReport::to_csv() const {
  std::string out;
  out += "# tool_version=" + std::string(kToolVersion) + "\n";
  out += "# config=" + config.dump() + "\n";
  out += "nfe,schedule,alpha,cached_fraction,compute_fraction,mean_wall_ms,speedup,"
         "mean_rel_l2,mean_rel_l1,mean_max_abs,sublayer_computes\n";
  for (const BenchRow& r : rows) {
    out += std::to_string(r.nfe) + ",";
    out += r.baseline ? "baseline," : "cached,";
    out += (r.baseline ? "" : fmt(r.alpha)) + ",";
    out += fmt(r.cached_fraction) + "," + fmt(r.compute_fraction) + ",";
    out += fmt(r.mean_wall_ms) + "," + fmt(r.speedup) + ",";
    out += fmt(r.mean_rel_l2) + "," + fmt(r.mean_rel_l1) + "," + fmt(r.mean_max_abs) + ",";
    out += std::to_string(r.sublayer_computes) + "\n";
  }
  return out;
}

std::string BenchReport::to_table() const {
  std::string out;
  out += "threshold sweep (divergence is an output-space proxy, not a perceptual metric)\n";
  out += "config: " + config.dump() + "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%4s  %-8s  %6s  %7s  %8s  %10s  %7s  %10s  %10s\n",
                "nfe", "schedule", "alpha", "cached%", "compute%", "wall_ms", "speedup",
                "rel_l2", "max_abs");
  out += line;
  for (const BenchRow& r : rows) {
    char alpha_buf[16];
    if (r.baseline) {
      std::snprintf(alpha_buf, sizeof(alpha_buf), "%6s", "-");
    } else {
      std::snprintf(alpha_buf, sizeof(alpha_buf), "%6.3f", r.alpha);
    }
    std::snprintf(line, sizeof(line),
                  "%4d  %-8s  %s  %6.1f%%  %7.1f%%  %10.3f  %6.2fx  %10.3e  %10.3e\n",
                  r.nfe, r.baseline ? "baseline" : "cached", alpha_buf,
                  100.0 * r.cached_fraction, 100.0 * r.compute_fraction, r.mean_wall_ms,
                  r.speedup, r.mean_rel_l2, r.mean_max_abs);
    out += line;
  }
  return out;
}

CompareReport compare_cache_vs_reduced(const Weights& w,
                                       const std::vector<EvalSample>& samples,
                                       int nfe, const CacheSchedule& schedule,
                                       const SamplerConfig& base) {
  if (samples.empty()) throw DomainError("compare: need at least one eval sample");
  base.validate();
  schedule.validate();
  if (schedule.nfe != nfe) {
    throw DomainError("compare: schedule nfe " + std::to_string(schedule.nfe) +
                      " != requested nfe " + std::to_string(nfe));
  }
  if (schedule.depth() != w.config.depth) {
    throw DomainError("compare: schedule depth does not match model");
  }
  const ScheduleStats ss = schedule_stats(schedule);
  const int c = ss.cached_per_layer[0];
  for (size_t l = 0; l < ss.cached_per_layer.size(); ++l) {
    if (ss.cached_per_layer[l] != c) {
      throw DomainError("compare: non-uniform per-layer cached counts (layer " +
                        layer_key(layer_from_index(static_cast<int>(l))) + " caches " +
                        std::to_string(ss.cached_per_layer[l]) + ", layer 0.attn caches " +
                        std::to_string(c) + "); comparison ill-defined");
    }
  }
  if (nfe - c < 1) throw DomainError("compare: reduced arm would have nfe < 1");

  CompareReport report;
  report.nfe = nfe;
  report.cached_per_layer = c;

  char fp[32];
  std::snprintf(fp, sizeof(fp), "fnv1a64:%016llx",
                static_cast<unsigned long long>(schedule.fingerprint()));
  report.config = {
      {"tool_version", kToolVersion},
      {"rng_algorithm", Rng::kAlgorithm},
      {"nfe", nfe},
      {"cached_per_layer", c},
      {"schedule_fingerprint", fp},
      {"strategy", to_string(schedule.strategy)},
      {"alpha", schedule.alpha},
      {"cfg_strength", base.cfg_strength},
      {"sway_coeff", base.sway_coeff},
      {"seed", base.seed},
      {"eval_samples", samples.size()},
      {"model_config", w.config.to_json()},
      {"weights_checksum", weights_checksum(w)},
      {"timing_threads", 1},
  };

  SingleThreadGuard guard;
  SamplerConfig full_cfg = base;
  full_cfg.nfe = nfe;
  SamplerConfig reduced_cfg = base;
  reduced_cfg.nfe = nfe - c;

  const ArmMeasurement ref = measure(w, samples, full_cfg, nullptr, nullptr, true);
  report.baseline_mean_wall_ms = ref.mean_wall_ms;

  const ArmMeasurement cached =
      measure(w, samples, full_cfg, &schedule, &ref.outputs, false);
  report.cached_arm.name = "cached";
  report.cached_arm.nfe = nfe;
  report.cached_arm.compute_steps_per_layer = ss.compute_per_layer[0];
  report.cached_arm.sublayer_computes = cached.first_stats.sublayer_computes;
  report.cached_arm.mean_wall_ms = cached.mean_wall_ms;
  report.cached_arm.mean_rel_l2 = cached.mean_rel_l2;
  report.cached_arm.mean_rel_l1 = cached.mean_rel_l1;
  report.cached_arm.mean_max_abs = cached.mean_max_abs;

  const ArmMeasurement reduced =
      measure(w, samples, reduced_cfg, nullptr, &ref.outputs, false);
  report.reduced_arm.name = "reduced-nfe";
  report.reduced_arm.nfe = nfe - c;
  report.reduced_arm.compute_steps_per_layer = nfe - c;
  report.reduced_arm.sublayer_computes = reduced.first_stats.sublayer_computes;
  report.reduced_arm.mean_wall_ms = reduced.mean_wall_ms;
  report.reduced_arm.mean_rel_l2 = reduced.mean_rel_l2;
  report.reduced_arm.mean_rel_l1 = reduced.mean_rel_l1;
  report.reduced_arm.mean_max_abs = reduced.mean_max_abs;

  report.compute_parity =
      report.cached_arm.compute_steps_per_layer == report.reduced_arm.compute_steps_per_layer &&
      report.cached_arm.sublayer_computes == report.reduced_arm.sublayer_computes;
  return report;
}

std::string CompareReport::to_csv() const {
  std::string out;
  out += "# tool_version=" + std::string(kToolVersion) + "\n";
  out += "# config=" + config.dump() + "\n";
  out += "# baseline_mean_wall_ms=" + fmt(baseline_mean_wall_ms) + "\n";
  out += "# compute_parity=" + std::string(compute_parity ? "true" : "false") + "\n";
  out += "arm,nfe,compute_steps_per_layer,sublayer_computes,mean_wall_ms,"
         "mean_rel_l2,mean_rel_l1,mean_max_abs\n";
  for (const CompareArm* a : {&cached_arm, &reduced_arm}) {
    out += a->name + "," + std::to_string(a->nfe) + "," +
           std::to_string(a->compute_steps_per_layer) + "," +
           std::to_string(a->sublayer_computes) + "," + fmt(a->mean_wall_ms) + "," +
           fmt(a->mean_rel_l2) + "," + fmt(a->mean_rel_l1) + "," + fmt(a->mean_max_abs) +
           "\n";
  }
  return out;
}

std::string CompareReport::to_table() const {
  std::string out;
  out += "caching vs reduced NFE at equal compute (divergence vs uncached nfe=" +
         std::to_string(nfe) + " reference; output-space proxy)\n";
  out += "config: " + config.dump() + "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "baseline: nfe=%d uncached, mean wall %.3f ms\n", nfe,
                baseline_mean_wall_ms);
  out += line;
  std::snprintf(line, sizeof(line), "%-12s  %4s  %13s  %9s  %10s  %10s  %10s\n", "arm",
                "nfe", "compute/layer", "sublayers", "wall_ms", "rel_l2", "max_abs");
  out += line;
  for (const CompareArm* a : {&cached_arm, &reduced_arm}) {
    std::snprintf(line, sizeof(line), "%-12s  %4d  %13d  %9llu  %10.3f  %10.3e  %10.3e\n",
                  a->name.c_str(), a->nfe, a->compute_steps_per_layer,
                  static_cast<unsigned long long>(a->sublayer_computes), a->mean_wall_ms,
                  a->mean_rel_l2, a->mean_max_abs);
    out += line;
  }
  out += std::string("compute parity: ") + (compute_parity ? "equal" : "MISMATCH") + "\n";
  return out;
}

}  // namespace ditcache
