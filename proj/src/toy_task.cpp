#include "ditcache/toy_task.hpp"

#include <algorithm>
#include <cmath>

#include "ditcache/errors.hpp"

namespace ditcache {

void ToyTaskConfig::validate() const {
  if (train_steps < 1) throw DomainError("toy task: train_steps must be >= 1");
  if (batch < 1) throw DomainError("toy task: batch must be >= 1");
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw DomainError("toy task: bad lr");
  if (max_components < 1) throw DomainError("toy task: max_components must be >= 1");
  if (!(amp_min > 0.0f) || !(amp_max >= amp_min)) {
    throw DomainError("toy task: need 0 < amp_min <= amp_max");
  }
  if (eval_batch < 1) throw DomainError("toy task: eval_batch must be >= 1");
}

ToySample gen_sample(const ModelConfig& cfg, Rng& rng, int max_components,
                     float amp_min, float amp_max) {
  const int seq = cfg.seq_len, ch = cfg.in_dim;
  ToySample s;
  s.x1 = Tensor::zeros({seq, ch});
  s.components.resize(static_cast<size_t>(ch));
  s.amp_sum.assign(static_cast<size_t>(ch), 0.0f);
  for (int c = 0; c < ch; ++c) {
    const int k = rng.next_int(1, max_components);
    s.components[static_cast<size_t>(c)] = k;
    for (int j = 0; j < k; ++j) {
      const float amp = rng.uniform(amp_min, amp_max);
      const float freq = rng.uniform(0.5f, 4.0f);
      const float phase = rng.uniform(0.0f, static_cast<float>(2.0 * M_PI));
      s.amp_sum[static_cast<size_t>(c)] += amp;
      for (int i = 0; i < seq; ++i) {
        const float arg =
            static_cast<float>(2.0 * M_PI) * freq * static_cast<float>(i) / seq + phase;
        s.x1.at(i, c) += amp * std::sin(arg);
      }
    }
  }
  s.cond = s.x1;
  for (int i = (seq + 1) / 2; i < seq; ++i) {
    for (int c = 0; c < ch; ++c) s.cond.at(i, c) = 0.0f;
  }
  return s;
}

namespace {

// x_t and target u for a CFM draw.
void cfm_pair(const Tensor& x1, const Tensor& x0, float t, Tensor& xt, Tensor& u) {
  require_same_shape(x1, x0, "cfm pair");
  xt = Tensor::zeros(x1.shape);
  u = Tensor::zeros(x1.shape);
  for (size_t i = 0; i < x1.data.size(); ++i) {
    xt.data[i] = (1.0f - t) * x0.data[i] + t * x1.data[i];
    u.data[i] = x1.data[i] - x0.data[i];
  }
}

double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

}  // namespace

double cfm_loss_at(const Weights& w, const Tensor& x1, const Tensor& cond,
                   const Tensor& x0, float t) {
  Tensor xt, u;
  cfm_pair(x1, x0, t, xt, u);
  const Tensor v = model_forward_reference(w, xt, t, cond, Branch::Cond);
  return mse(v, u);
}

double cfm_loss(const Weights& w, const Tensor& x1, const Tensor& cond, Rng& rng) {
  const float t = rng.next_float();
  const Tensor x0 = Tensor::randn(x1.shape, rng);
  return cfm_loss_at(w, x1, cond, x0, t);
}

double cfm_loss_and_grad(const Weights& w, const Tensor& x1, const Tensor& cond,
                         const Tensor& x0, float t, Weights& grads) {
  Tensor xt, u;
  cfm_pair(x1, x0, t, xt, u);
  const ForwardActs acts = model_forward_train(w, xt, cond, t);
  const double loss = mse(acts.v, u);
  Tensor dv = Tensor::zeros(acts.v.shape);
  const float inv_n = 2.0f / static_cast<float>(dv.data.size());
  for (size_t i = 0; i < dv.data.size(); ++i) {
    dv.data[i] = inv_n * (acts.v.data[i] - u.data[i]);
  }
  model_backward(w, acts, dv, grads);
  return loss;
}

std::vector<EvalItem> make_eval_set(const ModelConfig& cfg, const ToyTaskConfig& tc) {
  std::vector<EvalItem> items;
  items.reserve(static_cast<size_t>(tc.eval_batch));
  for (int i = 0; i < tc.eval_batch; ++i) {
    const uint64_t idx = static_cast<uint64_t>(i);
    Rng data_rng = Rng::substream(tc.seed, "eval-data", idx);
    Rng noise_rng = Rng::substream(tc.seed, "eval-noise", idx);
    Rng t_rng = Rng::substream(tc.seed, "eval-t", idx);
    EvalItem item;
    ToySample s = gen_sample(cfg, data_rng, tc.max_components, tc.amp_min, tc.amp_max);
    item.x1 = std::move(s.x1);
    item.cond = std::move(s.cond);
    item.x0 = Tensor::randn(item.x1.shape, noise_rng);
    item.t = t_rng.next_float();
    items.push_back(std::move(item));
  }
  return items;
}

double eval_loss(const Weights& w, const std::vector<EvalItem>& items) {
  if (items.empty()) throw DomainError("eval_loss: empty eval set");
  double s = 0.0;
  for (const EvalItem& it : items) s += cfm_loss_at(w, it.x1, it.cond, it.x0, it.t);
  return s / static_cast<double>(items.size());
}

TrainResult train(const ModelConfig& cfg, const ToyTaskConfig& tc) {
  cfg.validate();
  tc.validate();
  TrainResult result;
  result.weights = Weights::init(cfg, tc.seed);
  const std::vector<EvalItem> eval_set = make_eval_set(cfg, tc);
  result.initial_eval = eval_loss(result.weights, eval_set);

  Weights grads = Weights::zeros(cfg);
  auto params = result.weights.named_params();
  auto gparams = grads.named_params();
  uint64_t sample_idx = 0;
  for (int step = 0; step < tc.train_steps; ++step) {
    const Weights last_good = result.weights;
    for (auto& gp : gparams) std::fill(gp.second->data.begin(), gp.second->data.end(), 0.0f);
    double batch_loss = 0.0;
    bool bad = false;
    try {
      for (int b = 0; b < tc.batch; ++b) {
        Rng data_rng = Rng::substream(tc.seed, "train-data", sample_idx);
        Rng draw_rng = Rng::substream(tc.seed, "train-noise", sample_idx);
        ++sample_idx;
        const ToySample s =
            gen_sample(cfg, data_rng, tc.max_components, tc.amp_min, tc.amp_max);
        const float t = draw_rng.next_float();
        const Tensor x0 = Tensor::randn(s.x1.shape, draw_rng);
        batch_loss += cfm_loss_and_grad(result.weights, s.x1, s.cond, x0, t, grads);
      }
    } catch (const DomainError&) {
      bad = true;  // non-finite activations surfaced mid-batch
    }
    batch_loss /= tc.batch;
    if (bad || !std::isfinite(batch_loss)) {
      result.weights = last_good;
      result.aborted = true;
      break;
    }
    result.losses.push_back(batch_loss);
    const float scale = -tc.lr / static_cast<float>(tc.batch);
    for (size_t p = 0; p < params.size(); ++p) {
      Tensor* w = params[p].second;
      const Tensor* g = gparams[p].second;
      for (size_t i = 0; i < w->data.size(); ++i) w->data[i] += scale * g->data[i];
    }
    result.steps_completed = step + 1;
  }
  result.final_eval = eval_loss(result.weights, eval_set);
  return result;
}

}  // namespace ditcache
