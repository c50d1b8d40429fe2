#include "ditcache/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ditcache/errors.hpp"

namespace ditcache {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Independent: return "independent";
    case Strategy::AttnOnly: return "attn-only";
    case Strategy::FfnOnly: return "ffn-only";
    case Strategy::UnifiedAttnBase: return "unified-attn";
    case Strategy::UnifiedFfnBase: return "unified-ffn";
  }
  throw DomainError("unknown strategy enum value");
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "independent") return Strategy::Independent;
  if (s == "attn-only") return Strategy::AttnOnly;
  if (s == "ffn-only") return Strategy::FfnOnly;
  if (s == "unified-attn") return Strategy::UnifiedAttnBase;
  if (s == "unified-ffn") return Strategy::UnifiedFfnBase;
  throw DomainError("unknown strategy '" + s +
                    "' (expected independent|attn-only|ffn-only|unified-attn|unified-ffn)");
}

void ErrorProfile::validate() const {
  if (nfe < 1) throw DomainError("ErrorProfile: nfe must be >= 1");
  if (sample_count < 1) throw DomainError("ErrorProfile: sample_count must be >= 1");
  if (errors.empty() || errors.size() % 2 != 0) {
    throw DomainError("ErrorProfile: need 2 x depth layer curves, got " +
                      std::to_string(errors.size()));
  }
  for (const auto& curve : errors) {
    if (static_cast<int>(curve.size()) != nfe - 1) {
      throw DomainError("ErrorProfile: curve length " + std::to_string(curve.size()) +
                        " != nfe-1 = " + std::to_string(nfe - 1));
    }
    for (double e : curve) {
      if (!(e >= 0.0) || !std::isfinite(e)) {
        throw DomainError("ErrorProfile: errors must be finite and >= 0");
      }
    }
  }
}

nlohmann::json ErrorProfile::to_json() const {
  nlohmann::json j;
  j["nfe"] = nfe;
  j["sample_count"] = sample_count;
  nlohmann::json errs = nlohmann::json::object();
  for (size_t i = 0; i < errors.size(); ++i) {
    errs[layer_key(layer_from_index(static_cast<int>(i)))] = errors[i];
  }
  j["errors"] = errs;
  return j;
}

ErrorProfile ErrorProfile::from_json(const nlohmann::json& j) {
  ErrorProfile p;
  p.nfe = j.at("nfe").get<int>();
  p.sample_count = j.at("sample_count").get<int>();
  const auto& errs = j.at("errors");
  p.errors.resize(errs.size());
  for (const auto& [key, value] : errs.items()) {
    const int idx = layer_index(layer_from_key(key));
    if (idx < 0 || idx >= static_cast<int>(p.errors.size())) {
      throw DomainError("ErrorProfile: layer key out of range: " + key);
    }
    p.errors[static_cast<size_t>(idx)] = value.get<std::vector<double>>();
  }
  p.validate();
  return p;
}

void CacheSchedule::validate() const {
  if (nfe < 1) throw DomainError("CacheSchedule: nfe must be >= 1");
  if (max_consecutive < 1) throw DomainError("CacheSchedule: max_consecutive must be >= 1");
  if (masks.empty() || masks.size() % 2 != 0) {
    throw DomainError("CacheSchedule: need 2 x depth masks");
  }
  for (size_t l = 0; l < masks.size(); ++l) {
    const auto& m = masks[l];
    if (static_cast<int>(m.size()) != nfe) {
      throw DomainError("CacheSchedule: mask length != nfe");
    }
    if (m[0] != 0) {
      throw DomainError("CacheSchedule: step 0 must compute for layer " +
                        layer_key(layer_from_index(static_cast<int>(l))));
    }
    int run = 0;
    for (uint8_t v : m) {
      run = v ? run + 1 : 0;
      if (run > max_consecutive) {
        throw DomainError("CacheSchedule: cached run exceeds cap for layer " +
                          layer_key(layer_from_index(static_cast<int>(l))));
      }
    }
  }
}

nlohmann::json CacheSchedule::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["nfe"] = nfe;
  j["alpha"] = alpha;
  j["strategy"] = to_string(strategy);
  j["max_consecutive"] = max_consecutive;
  nlohmann::json ms = nlohmann::json::object();
  for (size_t i = 0; i < masks.size(); ++i) {
    std::vector<int> row(masks[i].begin(), masks[i].end());
    ms[layer_key(layer_from_index(static_cast<int>(i)))] = row;
  }
  j["masks"] = ms;
  return j;
}

CacheSchedule CacheSchedule::from_json(const nlohmann::json& j) {
  CacheSchedule s;
  s.nfe = j.at("nfe").get<int>();
  s.alpha = j.at("alpha").get<double>();
  s.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  s.max_consecutive = j.at("max_consecutive").get<int>();
  const auto& ms = j.at("masks");
  s.masks.resize(ms.size());
  for (const auto& [key, value] : ms.items()) {
    const int idx = layer_index(layer_from_key(key));
    if (idx < 0 || idx >= static_cast<int>(s.masks.size())) {
      throw DomainError("CacheSchedule: layer key out of range: " + key);
    }
    auto row = value.get<std::vector<int>>();
    std::vector<uint8_t> mask(row.size());
    for (size_t i = 0; i < row.size(); ++i) {
      if (row[i] != 0 && row[i] != 1) throw DomainError("CacheSchedule: mask entries must be 0/1");
      mask[i] = static_cast<uint8_t>(row[i]);
    }
    s.masks[static_cast<size_t>(idx)] = std::move(mask);
  }
  s.validate();
  return s;
}

uint64_t CacheSchedule::fingerprint() const {
  const std::string dump = to_json().dump();
  return fnv1a64(dump.data(), dump.size());
}

double l1_relative_error(const Tensor& h_curr, const Tensor& h_prev) {
  require_same_shape(h_curr, h_prev, "l1_relative_error");
  double num = 0.0, den = 0.0;
  const size_t n = h_prev.numel();
  for (size_t i = 0; i < n; ++i) {
    num += std::abs(static_cast<double>(h_curr.data[i]) - static_cast<double>(h_prev.data[i]));
    den += std::abs(static_cast<double>(h_prev.data[i]));
  }
  if (den < 1e-12) {
    throw DegenerateDenominatorError(
        "l1_relative_error: reference activation has near-zero L1 norm");
  }
  return num / den;
}

std::vector<uint8_t> build_layer_mask(const std::vector<double>& errors,
                                      double alpha, int max_consecutive) {
  if (errors.empty()) throw DomainError("build_layer_mask: empty error sequence");
  if (!(alpha > 0.0)) throw DomainError("build_layer_mask: alpha must be > 0");
  if (max_consecutive < 1) throw DomainError("build_layer_mask: max_consecutive must be >= 1");

  const int nfe = static_cast<int>(errors.size()) + 1;
  std::vector<uint8_t> mask(static_cast<size_t>(nfe), 0);
  int run = 0;
  for (int step = 1; step < nfe; ++step) {
    const bool candidate = errors[static_cast<size_t>(step - 1)] < alpha;
    if (candidate && run < max_consecutive) {
      mask[static_cast<size_t>(step)] = 1;
      ++run;
    } else {
      run = 0;
    }
  }
  return mask;
}

CacheSchedule apply_strategy(const ErrorProfile& profile, double alpha,
                             int max_consecutive, Strategy strategy) {
  profile.validate();
  const int depth = profile.depth();
  CacheSchedule s;
  s.nfe = profile.nfe;
  s.alpha = alpha;
  s.strategy = strategy;
  s.max_consecutive = max_consecutive;
  s.masks.assign(static_cast<size_t>(2 * depth),
                 std::vector<uint8_t>(static_cast<size_t>(profile.nfe), 0));

  for (int b = 0; b < depth; ++b) {
    const LayerId attn{b, LayerKind::Attn};
    const LayerId ffn{b, LayerKind::Ffn};
    auto& attn_mask = s.masks[static_cast<size_t>(layer_index(attn))];
    auto& ffn_mask = s.masks[static_cast<size_t>(layer_index(ffn))];
    switch (strategy) {
      case Strategy::Independent:
        attn_mask = build_layer_mask(profile.layer_errors(attn), alpha, max_consecutive);
        ffn_mask = build_layer_mask(profile.layer_errors(ffn), alpha, max_consecutive);
        break;
      case Strategy::AttnOnly:
        attn_mask = build_layer_mask(profile.layer_errors(attn), alpha, max_consecutive);
        break;
      case Strategy::FfnOnly:
        ffn_mask = build_layer_mask(profile.layer_errors(ffn), alpha, max_consecutive);
        break;
      case Strategy::UnifiedAttnBase:
        attn_mask = build_layer_mask(profile.layer_errors(attn), alpha, max_consecutive);
        ffn_mask = attn_mask;
        break;
      case Strategy::UnifiedFfnBase:
        ffn_mask = build_layer_mask(profile.layer_errors(ffn), alpha, max_consecutive);
        attn_mask = ffn_mask;
        break;
    }
  }
  s.validate();
  return s;
}

ScheduleStats schedule_stats(const CacheSchedule& schedule) {
  ScheduleStats st;
  long long cached_total = 0;
  for (const auto& mask : schedule.masks) {
    int cached = 0;
    for (uint8_t v : mask) cached += v ? 1 : 0;
    st.cached_per_layer.push_back(cached);
    st.compute_per_layer.push_back(schedule.nfe - cached);
    cached_total += cached;
  }
  const double total = static_cast<double>(schedule.masks.size()) * schedule.nfe;
  st.cached_fraction = static_cast<double>(cached_total) / total;
  st.compute_fraction = 1.0 - st.cached_fraction;
  return st;
}

CacheSchedule uniform_cached_schedule(int depth, int nfe, int cached_per_layer,
                                      int max_consecutive) {
  if (depth < 1) throw DomainError("uniform_cached_schedule: depth must be >= 1");
  if (nfe < 1) throw DomainError("uniform_cached_schedule: nfe must be >= 1");
  if (max_consecutive < 1) throw DomainError("uniform_cached_schedule: cap must be >= 1");
  // c cached steps need c + ceil(c/cap) - 1 slots after step 0.
  const int runs = (cached_per_layer + max_consecutive - 1) / max_consecutive;
  const int needed = cached_per_layer + (runs > 0 ? runs - 1 : 0);
  if (cached_per_layer < 0 || needed > nfe - 1) {
    throw DomainError("uniform_cached_schedule: cannot place " +
                      std::to_string(cached_per_layer) + " cached steps in nfe=" +
                      std::to_string(nfe) + " under cap=" + std::to_string(max_consecutive));
  }

  std::vector<uint8_t> mask(static_cast<size_t>(nfe), 0);
  int remaining = cached_per_layer;
  int step = 1;
  while (remaining > 0) {
    const int run = std::min(remaining, max_consecutive);
    for (int i = 0; i < run; ++i) mask[static_cast<size_t>(step++)] = 1;
    remaining -= run;
    if (remaining > 0) ++step;  // forced compute separating runs
  }

  CacheSchedule s;
  s.nfe = nfe;
  s.alpha = 0.0;
  s.strategy = Strategy::UnifiedAttnBase;
  s.max_consecutive = max_consecutive;
  s.masks.assign(static_cast<size_t>(2 * depth), mask);
  s.validate();
  return s;
}

double alpha_for_cached_fraction(const ErrorProfile& profile, Strategy strategy,
                                 int max_consecutive, double target_fraction) {
  profile.validate();
  // Candidate thresholds: just above each distinct error value, plus one
  // below everything. Fractions are monotone in alpha, so scanning all
  // candidates finds the closest achievable fraction.
  std::set<double> values;
  for (const auto& curve : profile.errors)
    for (double e : curve) values.insert(e);

  std::vector<double> candidates;
  candidates.push_back(1e-12);
  for (double v : values) candidates.push_back(std::nextafter(v, 1e300));

  double best_alpha = candidates.front();
  double best_gap = 1e300;
  for (double a : candidates) {
    const CacheSchedule s = apply_strategy(profile, a, max_consecutive, strategy);
    const double frac = schedule_stats(s).cached_fraction;
    const double gap = std::abs(frac - target_fraction);
    if (gap < best_gap - 1e-15) {
      best_gap = gap;
      best_alpha = a;
    }
  }
  return best_alpha;
}

}  // namespace ditcache
