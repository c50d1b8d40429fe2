// ditcache: selective sublayer caching for a compact diffusion transformer.
// Subcommands: train-toy, calibrate, schedule, infer, bench, compare.
// Exit codes: 0 success, 1 domain/runtime error, 2 usage error.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ditcache/bench.hpp"
#include "ditcache/calibrate.hpp"
#include "ditcache/executor.hpp"
#include "ditcache/io.hpp"
#include "ditcache/kernels.hpp"
#include "ditcache/model.hpp"
#include "ditcache/sampler.hpp"
#include "ditcache/schedule.hpp"
#include "ditcache/toy_task.hpp"
#include "ditcache/version.hpp"

namespace {

using namespace ditcache;
using nlohmann::json;

void echo_config(const char* cmd, const json& cfg) {
  std::fprintf(stderr, "%s config: %s\n", cmd, cfg.dump().c_str());
}

json load_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError(path + ": bad json: " + e.what());
  }
}

ErrorProfile load_profile(const std::string& path) {
  try {
    return ErrorProfile::from_json(load_json(path));
  } catch (const json::exception& e) {
    throw IoError(path + ": bad profile: " + e.what());
  }
}

CacheSchedule load_schedule(const std::string& path) {
  try {
    return CacheSchedule::from_json(load_json(path));
  } catch (const json::exception& e) {
    throw IoError(path + ": bad schedule: " + e.what());
  }
}

struct TrainArgs {
  std::string out_dir = "runs/toy";
  ToyTaskConfig task;
  ModelConfig model;
};

void run_train(const TrainArgs& a) {
  json cfg = {{"out_dir", a.out_dir},       {"steps", a.task.train_steps},
              {"batch", a.task.batch},      {"lr", a.task.lr},
              {"seed", a.task.seed},        {"eval_batch", a.task.eval_batch},
              {"model", a.model.to_json()}, {"tool_version", kToolVersion}};
  echo_config("train-toy", cfg);

  const TrainResult result = train(a.model, a.task);
  if (result.aborted) {
    save_checkpoint(a.out_dir, result.weights, a.task.seed);
    throw DomainError("training diverged (non-finite loss) after " +
                      std::to_string(result.steps_completed) +
                      " steps; last good checkpoint written to " + a.out_dir);
  }
  save_checkpoint(a.out_dir, result.weights, a.task.seed);

  std::string curve = "step,loss\n";
  for (size_t i = 0; i < result.losses.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof(line), "%zu,%.9g\n", i, result.losses[i]);
    curve += line;
  }
  atomic_write_file(std::filesystem::path(a.out_dir) / "loss_curve.csv", curve);

  const double reduction = 1.0 - result.final_eval / result.initial_eval;
  json stats = {{"tool_version", kToolVersion},
                {"rng_algorithm", Rng::kAlgorithm},
                {"config", cfg},
                {"initial_eval_loss", result.initial_eval},
                {"final_eval_loss", result.final_eval},
                {"eval_loss_reduction", reduction},
                {"steps_completed", result.steps_completed},
                {"weights_checksum", weights_checksum(result.weights)}};
  atomic_write_file(std::filesystem::path(a.out_dir) / "train_stats.json",
                    stats.dump(2) + "\n");
  std::fprintf(stderr, "train-toy: eval loss %.6f -> %.6f (%.1f%% reduction)\n",
               result.initial_eval, result.final_eval, 100.0 * reduction);
  std::printf("checkpoint written to %s\n", a.out_dir.c_str());
  if (reduction < 0.5) {
    throw DomainError("held-out loss reduction " + std::to_string(100.0 * reduction) +
                      "% is below the 50% training gate; calibration on this model "
                      "would not be meaningful");
  }
}

struct CalibrateArgs {
  std::string weights;
  std::string out;
  std::string branch = "cond";
  int samples = 10;
  uint64_t seed = 42;
  SamplerConfig sampler;
};

void run_calibrate(const CalibrateArgs& a) {
  json cfg = {{"weights", a.weights},   {"out", a.out},
              {"branch", a.branch},     {"samples", a.samples},
              {"seed", a.seed},         {"nfe", a.sampler.nfe},
              {"cfg", a.sampler.cfg_strength}, {"sway", a.sampler.sway_coeff},
              {"tool_version", kToolVersion}};
  echo_config("calibrate", cfg);

  const Weights w = load_checkpoint(a.weights);
  CalibrationConfig cc;
  cc.sample_count = a.samples;
  cc.sampler = a.sampler;
  cc.sampler.seed = a.seed;
  cc.capture = capture_branch_from_string(a.branch);

  std::vector<CalibrationSample> samples;
  samples.reserve(static_cast<size_t>(a.samples));
  for (int i = 0; i < a.samples; ++i) {
    Rng data_rng = Rng::substream(a.seed, "calib-data", static_cast<uint64_t>(i));
    Rng noise_rng = Rng::substream(a.seed, "calib-noise", static_cast<uint64_t>(i));
    CalibrationSample s;
    s.cond = gen_sample(w.config, data_rng).cond;
    s.noise = Tensor::randn({w.config.seq_len, w.config.in_dim}, noise_rng);
    samples.push_back(std::move(s));
  }

  const ErrorProfile profile = calibrate(w, samples, cc);
  json out = profile.to_json();
  out["provenance"] = {{"tool_version", kToolVersion},
                       {"rng_algorithm", Rng::kAlgorithm},
                       {"weights", a.weights},
                       {"weights_checksum", weights_checksum(w)},
                       {"capture_branch", a.branch},
                       {"seed", a.seed},
                       {"sample_streams", {{"data", "calib-data"}, {"noise", "calib-noise"}}},
                       {"sampler",
                        {{"nfe", cc.sampler.nfe},
                         {"cfg_strength", cc.sampler.cfg_strength},
                         {"sway_coeff", cc.sampler.sway_coeff}}}};
  atomic_write_file(a.out, out.dump(2) + "\n");
  std::printf("profile written to %s (%d samples, nfe %d)\n", a.out.c_str(), a.samples,
              a.sampler.nfe);
}

struct ScheduleArgs {
  std::string profile;
  std::string out;
  std::string strategy = "unified-attn";
  double alpha = 0.0;
  bool have_alpha = false;
  double target_fraction = 0.0;
  bool have_target = false;
  int cap = 3;
};

void run_schedule(const ScheduleArgs& a) {
  json cfg = {{"profile", a.profile}, {"out", a.out},
              {"strategy", a.strategy}, {"cap", a.cap},
              {"tool_version", kToolVersion}};
  if (a.have_alpha) cfg["alpha"] = a.alpha;
  if (a.have_target) cfg["target_fraction"] = a.target_fraction;
  echo_config("schedule", cfg);

  const ErrorProfile profile = load_profile(a.profile);
  const Strategy strategy = strategy_from_string(a.strategy);
  double alpha = a.alpha;
  if (a.have_target) {
    alpha = alpha_for_cached_fraction(profile, strategy, a.cap, a.target_fraction);
    std::fprintf(stderr, "schedule: target fraction %.3f -> alpha %.9g\n",
                 a.target_fraction, alpha);
  }
  const CacheSchedule schedule = apply_strategy(profile, alpha, a.cap, strategy);
  const ScheduleStats stats = schedule_stats(schedule);
  json out = schedule.to_json();
  out["provenance"] = {{"tool_version", kToolVersion},
                       {"profile", a.profile},
                       {"profile_checksum", file_checksum(a.profile)}};
  atomic_write_file(a.out, out.dump(2) + "\n");
  std::fprintf(stderr, "schedule: cached fraction %.3f (compute %.3f)\n",
               stats.cached_fraction, stats.compute_fraction);
  std::printf("schedule written to %s (alpha %.9g, cached fraction %.3f)\n",
              a.out.c_str(), alpha, stats.cached_fraction);
}

struct InferArgs {
  std::string weights;
  std::string schedule;
  std::string cond;
  std::string out;
  std::string stats;
  SamplerConfig sampler;
};

void run_infer(const InferArgs& a) {
  json cfg = {{"weights", a.weights},
              {"schedule", a.schedule.empty() ? "none" : a.schedule},
              {"cond", a.cond.empty() ? "synthetic" : a.cond},
              {"nfe", a.sampler.nfe},
              {"cfg", a.sampler.cfg_strength},
              {"sway", a.sampler.sway_coeff},
              {"seed", a.sampler.seed},
              {"tool_version", kToolVersion}};
  echo_config("infer", cfg);

  const Weights w = load_checkpoint(a.weights);
  CacheSchedule schedule;
  const CacheSchedule* schedule_ptr = nullptr;
  if (!a.schedule.empty()) {
    schedule = load_schedule(a.schedule);
    schedule_ptr = &schedule;
  }
  Tensor cond;
  if (!a.cond.empty()) {
    cond = dten_read(a.cond);
  } else {
    Rng data_rng = Rng::substream(a.sampler.seed, "infer-data", 0);
    cond = gen_sample(w.config, data_rng).cond;
  }
  Rng noise_rng = Rng::substream(a.sampler.seed, "infer-noise", 0);
  const Tensor noise = Tensor::randn({w.config.seq_len, w.config.in_dim}, noise_rng);

  auto [out, stats] = cached_infer(w, noise, cond, a.sampler, schedule_ptr);
  json jstats = stats.to_json();
  json inputs = {{"weights", a.weights}, {"weights_checksum", weights_checksum(w)}};
  if (!a.schedule.empty()) inputs["schedule_checksum"] = file_checksum(a.schedule);
  if (!a.cond.empty()) inputs["cond_checksum"] = file_checksum(a.cond);
  jstats["inputs"] = inputs;
  if (!a.out.empty()) {
    dten_write(a.out, out);
    jstats["output"] = {{"path", a.out}, {"checksum", file_checksum(a.out)}};
  }
  if (!a.stats.empty()) atomic_write_file(a.stats, jstats.dump(2) + "\n");
  std::printf("%s\n", jstats.dump(2).c_str());
}

struct BenchArgs {
  std::string weights;
  std::vector<std::string> profiles;
  std::vector<int> nfe_list{32};
  std::vector<double> alpha_list{0.15, 0.25};
  std::string strategy = "unified-attn";
  int cap = 3;
  int samples = 32;
  std::string out_csv;
  SamplerConfig sampler;
};

void run_bench(const BenchArgs& a) {
  json cfg = {{"weights", a.weights},   {"profiles", a.profiles},
              {"nfe", a.nfe_list},      {"alpha", a.alpha_list},
              {"strategy", a.strategy}, {"cap", a.cap},
              {"samples", a.samples},   {"cfg", a.sampler.cfg_strength},
              {"sway", a.sampler.sway_coeff}, {"seed", a.sampler.seed},
              {"tool_version", kToolVersion}};
  echo_config("bench", cfg);

  const Weights w = load_checkpoint(a.weights);
  std::map<int, ErrorProfile> profiles;
  for (const std::string& path : a.profiles) {
    ErrorProfile p = load_profile(path);
    if (profiles.count(p.nfe)) {
      throw DomainError("bench: two profiles for nfe " + std::to_string(p.nfe));
    }
    profiles.emplace(p.nfe, std::move(p));
  }
  const std::vector<EvalSample> samples =
      make_eval_samples(w.config, a.samples, a.sampler.seed);
  BenchReport report = bench_sweep(w, samples, a.nfe_list, a.alpha_list,
                                   strategy_from_string(a.strategy), a.cap, profiles,
                                   a.sampler);
  for (const std::string& path : a.profiles) {
    report.config["inputs"].push_back(
        {{"path", path}, {"checksum", file_checksum(path)}});
  }
  std::printf("%s", report.to_table().c_str());
  if (!a.out_csv.empty()) {
    atomic_write_file(a.out_csv, report.to_csv());
    std::printf("csv written to %s\n", a.out_csv.c_str());
  }
}

struct CompareArgs {
  std::string weights;
  std::string schedule;
  int cached_steps = -1;
  int nfe = 32;
  int cap = 3;
  int samples = 32;
  std::string out_csv;
  SamplerConfig sampler;
};

void run_compare(const CompareArgs& a) {
  json cfg = {{"weights", a.weights},
              {"schedule", a.schedule.empty() ? "synthetic-uniform" : a.schedule},
              {"nfe", a.nfe},
              {"samples", a.samples},
              {"cfg", a.sampler.cfg_strength},
              {"sway", a.sampler.sway_coeff},
              {"seed", a.sampler.seed},
              {"tool_version", kToolVersion}};
  if (a.cached_steps >= 0) cfg["cached_steps"] = a.cached_steps;
  echo_config("compare", cfg);

  const Weights w = load_checkpoint(a.weights);
  CacheSchedule schedule;
  if (!a.schedule.empty()) {
    schedule = load_schedule(a.schedule);
  } else {
    schedule = uniform_cached_schedule(w.config.depth, a.nfe, a.cached_steps, a.cap);
  }
  SamplerConfig sampler = a.sampler;
  sampler.nfe = a.nfe;
  const std::vector<EvalSample> samples =
      make_eval_samples(w.config, a.samples, a.sampler.seed);
  CompareReport report = compare_cache_vs_reduced(w, samples, a.nfe, schedule, sampler);
  if (!a.schedule.empty()) {
    report.config["inputs"] = {
        {{"path", a.schedule}, {"checksum", file_checksum(a.schedule)}}};
  }
  std::printf("%s", report.to_table().c_str());
  if (!a.out_csv.empty()) {
    atomic_write_file(a.out_csv, report.to_csv());
    std::printf("csv written to %s\n", a.out_csv.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective sublayer caching for a compact diffusion transformer"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "kernel thread cap (0 = auto, 1 = serial)")
      ->capture_default_str();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train-toy", "train the toy model with CFM");
  train->add_option("--out-dir", train_args.out_dir)->capture_default_str();
  train->add_option("--steps", train_args.task.train_steps)->capture_default_str();
  train->add_option("--batch", train_args.task.batch)->capture_default_str();
  train->add_option("--lr", train_args.task.lr)->capture_default_str();
  train->add_option("--seed", train_args.task.seed)->capture_default_str();
  train->add_option("--eval-batch", train_args.task.eval_batch)->capture_default_str();
  train->add_option("--depth", train_args.model.depth)->capture_default_str();
  train->add_option("--width", train_args.model.width)->capture_default_str();
  train->add_option("--heads", train_args.model.heads)->capture_default_str();
  train->add_option("--ffn-mult", train_args.model.ffn_mult)->capture_default_str();
  train->add_option("--seq-len", train_args.model.seq_len)->capture_default_str();
  train->add_option("--in-dim", train_args.model.in_dim)->capture_default_str();

  CalibrateArgs cal_args;
  CLI::App* cal = app.add_subcommand("calibrate", "record per-layer L1 relative errors");
  cal->add_option("--weights", cal_args.weights, "checkpoint manifest or dir")->required();
  cal->add_option("--out", cal_args.out, "profile json path")->required();
  cal->add_option("--nfe", cal_args.sampler.nfe)->capture_default_str();
  cal->add_option("--cfg", cal_args.sampler.cfg_strength)->capture_default_str();
  cal->add_option("--sway", cal_args.sampler.sway_coeff)->capture_default_str();
  cal->add_option("--samples", cal_args.samples)->capture_default_str();
  cal->add_option("--seed", cal_args.seed)->capture_default_str();
  cal->add_option("--branch", cal_args.branch, "cond|uncond|both")->capture_default_str();

  ScheduleArgs sch_args;
  CLI::App* sch = app.add_subcommand("schedule", "build a cache schedule from a profile");
  sch->add_option("--profile", sch_args.profile)->required();
  sch->add_option("--out", sch_args.out)->required();
  CLI::Option* alpha_opt = sch->add_option("--alpha", sch_args.alpha, "error threshold");
  CLI::Option* target_opt = sch->add_option("--target-fraction", sch_args.target_fraction,
                                            "pick alpha for this cached fraction");
  alpha_opt->excludes(target_opt);
  sch->add_option("--strategy", sch_args.strategy,
                  "independent|attn-only|ffn-only|unified-attn|unified-ffn")
      ->capture_default_str();
  sch->add_option("--cap", sch_args.cap, "max consecutive cached steps")
      ->capture_default_str();

  InferArgs inf_args;
  CLI::App* inf = app.add_subcommand("infer", "run cached or baseline inference");
  inf->add_option("--weights", inf_args.weights)->required();
  inf->add_option("--schedule", inf_args.schedule, "cache schedule json (omit = baseline)");
  inf->add_option("--cond", inf_args.cond, "condition DTEN (omit = synthetic)");
  inf->add_option("--nfe", inf_args.sampler.nfe)->capture_default_str();
  inf->add_option("--cfg", inf_args.sampler.cfg_strength)->capture_default_str();
  inf->add_option("--sway", inf_args.sampler.sway_coeff)->capture_default_str();
  inf->add_option("--seed", inf_args.sampler.seed)->capture_default_str();
  inf->add_option("--out", inf_args.out, "output DTEN path");
  inf->add_option("--stats", inf_args.stats, "run stats json path");

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("bench", "threshold sweep vs uncached baselines");
  bench->add_option("--weights", bench_args.weights)->required();
  bench->add_option("--profile", bench_args.profiles, "profile json (repeat per nfe)")
      ->required();
  bench->add_option("--nfe", bench_args.nfe_list)->delimiter(',')->capture_default_str();
  bench->add_option("--alpha", bench_args.alpha_list)->delimiter(',')->capture_default_str();
  bench->add_option("--strategy", bench_args.strategy)->capture_default_str();
  bench->add_option("--cap", bench_args.cap)->capture_default_str();
  bench->add_option("--samples", bench_args.samples)->capture_default_str();
  bench->add_option("--cfg", bench_args.sampler.cfg_strength)->capture_default_str();
  bench->add_option("--sway", bench_args.sampler.sway_coeff)->capture_default_str();
  bench->add_option("--seed", bench_args.sampler.seed)->capture_default_str();
  bench->add_option("--out-csv", bench_args.out_csv);

  CompareArgs cmp_args;
  CLI::App* cmp = app.add_subcommand("compare", "caching vs reduced NFE at equal compute");
  cmp->add_option("--weights", cmp_args.weights)->required();
  CLI::Option* cmp_sched = cmp->add_option("--schedule", cmp_args.schedule);
  CLI::Option* cmp_steps = cmp->add_option("--cached-steps", cmp_args.cached_steps,
                                           "build a uniform schedule with c cached steps");
  cmp_sched->excludes(cmp_steps);
  cmp->add_option("--nfe", cmp_args.nfe)->capture_default_str();
  cmp->add_option("--cap", cmp_args.cap)->capture_default_str();
  cmp->add_option("--samples", cmp_args.samples)->capture_default_str();
  cmp->add_option("--cfg", cmp_args.sampler.cfg_strength)->capture_default_str();
  cmp->add_option("--sway", cmp_args.sampler.sway_coeff)->capture_default_str();
  cmp->add_option("--seed", cmp_args.sampler.seed)->capture_default_str();
  cmp->add_option("--out-csv", cmp_args.out_csv);

  try {
    app.parse(argc, argv);
    if (*sch && !alpha_opt->count() && !target_opt->count()) {
      throw CLI::RequiredError("schedule: one of --alpha or --target-fraction");
    }
    if (*cmp && !cmp_sched->count() && !cmp_steps->count()) {
      throw CLI::RequiredError("compare: one of --schedule or --cached-steps");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ditcache::kernels::set_max_threads(threads);
  try {
    if (*train) run_train(train_args);
    if (*cal) run_calibrate(cal_args);
    if (*sch) run_schedule(sch_args);
    if (*inf) run_infer(inf_args);
    if (*bench) run_bench(bench_args);
    if (*cmp) run_compare(cmp_args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
