#pragma once

#include <cstdint>
#include <vector>

#include "ditcache/model.hpp"
#include "ditcache/rng.hpp"

namespace ditcache {

struct ToyTaskConfig {
  int train_steps = 2000;
  int batch = 8;
  float lr = 0.02f;
  uint64_t seed = 42;
  int max_components = 3;     // sinusoids per channel, drawn from [1, max]
  float amp_min = 0.5f;
  float amp_max = 1.5f;
  int eval_batch = 32;        // held-out set for the before/after gate

  void validate() const;
};

// One synthetic target: x1 = sum of 1..max_components sinusoids per channel
// over the sequence axis; cond = x1 with the second half of the sequence
// zeroed. Component metadata kept so tests can bound amplitudes.
struct ToySample {
  Tensor x1;
  Tensor cond;
  std::vector<int> components;  // per channel
  std::vector<float> amp_sum;   // per channel
};

ToySample gen_sample(const ModelConfig& cfg, Rng& rng, int max_components = 3,
                     float amp_min = 0.5f, float amp_max = 1.5f);

// Conditional flow matching at a fixed draw: x_t = (1-t)*x0 + t*x1,
// target u = x1 - x0, loss = mean((v - u)^2).
double cfm_loss_at(const Weights& w, const Tensor& x1, const Tensor& cond,
                   const Tensor& x0, float t);

// Same, drawing t ~ U(0,1) then x0 ~ N(0,1) from rng (in that order).
double cfm_loss(const Weights& w, const Tensor& x1, const Tensor& cond, Rng& rng);

// Adds this sample's parameter gradients into grads; returns the loss.
double cfm_loss_and_grad(const Weights& w, const Tensor& x1, const Tensor& cond,
                         const Tensor& x0, float t, Weights& grads);

struct EvalItem {
  Tensor x1, cond, x0;
  float t = 0.0f;
};

// Held-out items with frozen (x0, t) draws so before/after losses compare
// like for like. Purposes: eval-data / eval-noise / eval-t.
std::vector<EvalItem> make_eval_set(const ModelConfig& cfg, const ToyTaskConfig& tc);
double eval_loss(const Weights& w, const std::vector<EvalItem>& items);

struct TrainResult {
  Weights weights;
  std::vector<double> losses;  // mean batch loss per step
  double initial_eval = 0.0;
  double final_eval = 0.0;
  int steps_completed = 0;
  bool aborted = false;        // NaN loss; weights = last good state
};

// Plain SGD on the CFM objective. Deterministic for a fixed config.
TrainResult train(const ModelConfig& cfg, const ToyTaskConfig& tc);

}  // namespace ditcache
