#include "ditcache/calibrate.hpp"

#include <algorithm>

#include "ditcache/errors.hpp"

namespace ditcache {

const char* to_string(CaptureBranch b) {
  switch (b) {
    case CaptureBranch::Cond: return "cond";
    case CaptureBranch::Uncond: return "uncond";
    case CaptureBranch::Both: return "both";
  }
  return "?";
}

CaptureBranch capture_branch_from_string(const std::string& s) {
  if (s == "cond") return CaptureBranch::Cond;
  if (s == "uncond") return CaptureBranch::Uncond;
  if (s == "both") return CaptureBranch::Both;
  throw DomainError("unknown capture branch: " + s + " (want cond|uncond|both)");
}

void CalibrationConfig::validate() const {
  if (sample_count < 1) throw DomainError("calibration: sample_count must be >= 1");
  sampler.validate();
  if (sampler.nfe < 2) {
    throw DomainError("calibration: nfe must be >= 2 to observe a transition");
  }
}

ErrorProfile calibrate(const Weights& w, const std::vector<CalibrationSample>& samples,
                       const CalibrationConfig& config) {
  config.validate();
  if (samples.empty()) throw DomainError("calibrate: need at least one sample");
  const int nfe = config.sampler.nfe;
  const int layers = 2 * w.config.depth;

  // vals[layer][transition] collects one error per (sample, captured branch).
  std::vector<std::vector<std::vector<double>>> vals(
      static_cast<size_t>(layers),
      std::vector<std::vector<double>>(static_cast<size_t>(nfe - 1)));

  const auto want = [&](Branch b) {
    if (config.capture == CaptureBranch::Both) return true;
    return (config.capture == CaptureBranch::Cond) == (b == Branch::Cond);
  };

  for (size_t si = 0; si < samples.size(); ++si) {
    // Only the previous step's outputs are retained, per captured branch.
    std::vector<Tensor> prev(static_cast<size_t>(layers) * 2);
    std::vector<int> seen(static_cast<size_t>(layers) * 2, 0);
    SublayerTap tap = [&](const LayerId& id, Branch b, const Tensor& out) {
      if (!want(b)) return;
      const size_t slot =
          static_cast<size_t>(layer_index(id)) * 2 + (b == Branch::Uncond ? 1 : 0);
      const int step = seen[slot];
      if (step > 0) {
        double e = 0.0;
        try {
          e = l1_relative_error(out, prev[slot]);
        } catch (const DegenerateDenominatorError& ex) {
          throw DegenerateDenominatorError(
              "calibration sample " + std::to_string(si) + ", block " +
              std::to_string(id.block) + " " + to_string(id.kind) + " (" +
              to_string(b) + "), transition " + std::to_string(step - 1) + "->" +
              std::to_string(step) + ": " + ex.what());
        }
        vals[static_cast<size_t>(layer_index(id))][static_cast<size_t>(step - 1)]
            .push_back(e);
      }
      prev[slot] = out;
      seen[slot] = step + 1;
    };
    euler_integrate(w, samples[si].noise, samples[si].cond, config.sampler,
                    nullptr, nullptr, &tap);
  }

  const size_t expected =
      samples.size() * (config.capture == CaptureBranch::Both ? 2 : 1);
  ErrorProfile profile;
  profile.nfe = nfe;
  profile.sample_count = static_cast<int>(samples.size());
  profile.errors.assign(static_cast<size_t>(layers),
                        std::vector<double>(static_cast<size_t>(nfe - 1), 0.0));
  for (int l = 0; l < layers; ++l) {
    for (int j = 0; j < nfe - 1; ++j) {
      auto& v = vals[static_cast<size_t>(l)][static_cast<size_t>(j)];
      if (v.size() != expected) {
        throw DomainError("calibrate: internal capture count mismatch");
      }
      // Sum in value order so the profile is invariant to sample order.
      std::sort(v.begin(), v.end());
      double sum = 0.0;
      for (const double e : v) sum += e;
      profile.errors[static_cast<size_t>(l)][static_cast<size_t>(j)] =
          sum / static_cast<double>(v.size());
    }
  }
  profile.validate();
  return profile;
}

}  // namespace ditcache
