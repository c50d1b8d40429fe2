#pragma once

#include <vector>

#include "ditcache/sampler.hpp"
#include "ditcache/schedule.hpp"

namespace ditcache {

// Which CFG branch feeds the error statistics. Both averages the two.
enum class CaptureBranch { Cond, Uncond, Both };

const char* to_string(CaptureBranch b);
CaptureBranch capture_branch_from_string(const std::string& s);

struct CalibrationConfig {
  int sample_count = 10;
  SamplerConfig sampler;
  CaptureBranch capture = CaptureBranch::Cond;

  void validate() const;
};

struct CalibrationSample {
  Tensor noise;
  Tensor cond;
};

// Full uncached denoising run per sample, tapping every sublayer output and
// reducing consecutive-step L1 relative errors into an ErrorProfile.
// Holds only the previous step's 2*depth tensors at a time; the final
// average sums each transition's per-sample errors in value order, so the
// profile does not depend on sample ordering. Never touches any cache.
// Degenerate denominators abort with (sample, layer, transition) context.
ErrorProfile calibrate(const Weights& w, const std::vector<CalibrationSample>& samples,
                       const CalibrationConfig& config);

}  // namespace ditcache
