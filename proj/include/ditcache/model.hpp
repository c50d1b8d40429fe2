#pragma once

#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ditcache/layers.hpp"
#include "ditcache/schedule.hpp"
#include "ditcache/tensor.hpp"

namespace ditcache {

struct ModelConfig {
  int depth = 4;
  int width = 64;
  int heads = 4;
  int ffn_mult = 4;
  int seq_len = 32;
  int in_dim = 8;

  int layer_count() const { return 2 * depth; }
  int head_dim() const { return width / heads; }
  void validate() const;  // throws DomainError

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct BlockWeights {
  Tensor mod_w, mod_b;          // [width x 4*width]: scale/shift for both sublayers
  Tensor qkv_w, qkv_b;          // [width x 3*width]
  Tensor attn_out_w, attn_out_b;  // [width x width]
  Tensor ffn_w1, ffn_b1;        // [width x ffn_mult*width]
  Tensor ffn_w2, ffn_b2;        // [ffn_mult*width x width]
};

struct Weights {
  ModelConfig config;
  Tensor in_w, in_b;            // [2*in_dim x width]
  Tensor pos_emb;               // [seq_len x width]
  Tensor t_w, t_b;              // [width x width]
  std::vector<BlockWeights> blocks;
  Tensor final_gamma, final_beta;  // [width]
  Tensor out_w, out_b;          // [width x in_dim]

  static Weights init(const ModelConfig& cfg, uint64_t seed);
  static Weights zeros(const ModelConfig& cfg);

  // Stable (name, tensor) enumeration; drives init, serialization, SGD
  // updates and the finite-difference checks.
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<std::pair<std::string, const Tensor*>> named_params() const;
};

// Combined checksum over all parameter tensors (order-sensitive).
std::string weights_checksum(const Weights& w);

// Checkpoint = manifest.json + one DTEN file per parameter, all in one
// directory. Loading verifies per-file checksums.
void save_checkpoint(const std::filesystem::path& dir, const Weights& w,
                     uint64_t train_seed);
Weights load_checkpoint(const std::filesystem::path& manifest_or_dir);

// Last computed sublayer outputs, keyed (layer, branch). Owned by exactly
// one inference run.
class CacheState {
 public:
  explicit CacheState(int depth);

  int depth() const { return depth_; }
  bool has(const LayerId& id, Branch b) const;
  // Throws CacheMissError naming (block, kind, branch, step) if absent.
  const Tensor& get(const LayerId& id, Branch b, int step) const;
  void put(const LayerId& id, Branch b, const Tensor& value);

  void note_compute(const LayerId& id, Branch b);
  void note_hit(const LayerId& id, Branch b);

  uint64_t hits() const { return hits_; }
  uint64_t computes() const { return computes_; }
  uint64_t computes_for(const LayerId& id, Branch b) const;
  uint64_t hits_for(const LayerId& id, Branch b) const;

 private:
  size_t slot(const LayerId& id, Branch b) const;
  int depth_;
  std::vector<Tensor> entries_;
  std::vector<uint8_t> present_;
  std::vector<uint64_t> computes_slot_, hits_slot_;
  uint64_t hits_ = 0, computes_ = 0;
};

// Cache decision for one timestep. Null schedule = compute everything.
struct StepCachePolicy {
  const CacheSchedule* schedule = nullptr;
  int step = 0;

  bool cached(const LayerId& id) const {
    return schedule != nullptr && schedule->cached(id, step);
  }
};

// Observes every freshly computed sublayer output (calibration tap).
using SublayerTap = std::function<void(const LayerId&, Branch, const Tensor&)>;

// Sinusoidal features at geometrically spaced frequencies; sin half then
// cos half. Exposed separately so the t=0 contract is testable.
Tensor sinusoid_features(float t, int width);

// Learned projection of the sinusoid features: gelu(feats @ t_w + t_b).
Tensor timestep_embed(const Weights& w, float t);

struct AttnActs;
struct FfnActs;

// Pre-residual multi-head self-attention output for an already modulated
// input. acts, when given, keeps what the backward pass needs.
Tensor attn_sublayer(const BlockWeights& bw, const ModelConfig& cfg,
                     const Tensor& x, AttnActs* acts = nullptr);

// Pre-residual FFN output: linear, GELU, linear.
Tensor ffn_sublayer(const BlockWeights& bw, const Tensor& x, FfnActs* acts = nullptr);

// One block with cache hooks at the two residual boundaries. The cached
// quantity is exactly the tensor the residual adds.
Tensor block_forward(const Weights& w, int block, const Tensor& x,
                     const Tensor& t_embed, Branch branch,
                     const StepCachePolicy& policy, CacheState& cache,
                     const SublayerTap* tap = nullptr);

// Hook-free twin: no cache or policy code on this path.
Tensor block_forward_reference(const Weights& w, int block, const Tensor& x,
                               const Tensor& t_embed, Branch branch,
                               const SublayerTap* tap = nullptr);

// Velocity field v(x, t, cond). The Uncond branch ignores cond content.
Tensor model_forward(const Weights& w, const Tensor& x, float t,
                     const Tensor& cond, Branch branch,
                     const StepCachePolicy& policy, CacheState& cache,
                     const SublayerTap* tap = nullptr);

Tensor model_forward_reference(const Weights& w, const Tensor& x, float t,
                               const Tensor& cond, Branch branch,
                               const SublayerTap* tap = nullptr);

// ---------------------------------------------------------------------------
// Training support: forward with retained activations + hand-written
// backward. Cond branch, compute-all, no cache involvement.
// ---------------------------------------------------------------------------

struct AttnActs {
  Tensor qkv;                // [S x 3W]
  std::vector<Tensor> probs; // heads x [S x S]
  Tensor ctx;                // [S x W]
};

struct FfnActs {
  Tensor pre;   // [S x F] pre-GELU
  Tensor post;  // [S x F] post-GELU
};

struct BlockActs {
  Tensor block_in;             // h entering the block
  Tensor mod;                  // [4W]
  Tensor ln1_xhat, ln1_rstd;   // [S x W], [S]
  Tensor attn_in;              // modulated norm fed to attention
  AttnActs attn;
  Tensor attn_out;
  Tensor h_mid;                // after attention residual
  Tensor ln2_xhat, ln2_rstd;
  Tensor ffn_in;
  FfnActs ffn;
  Tensor ffn_out;
};

struct ForwardActs {
  Tensor xin;                  // [S x 2I] concat(x, cond)
  Tensor h0;                   // input projection + position
  Tensor tfeat, t_pre, temb;   // [W] each
  std::vector<BlockActs> blocks;
  Tensor h_final;              // [S x W]
  Tensor lnf_xhat, lnf_rstd, lnf_out;
  Tensor v;                    // [S x I] model output
};

ForwardActs model_forward_train(const Weights& w, const Tensor& x,
                                const Tensor& cond, float t);

// Accumulates parameter gradients into `grads` (same layout as w) given
// dL/dv. Input gradients are not produced; inputs are data.
void model_backward(const Weights& w, const ForwardActs& acts, const Tensor& dv,
                    Weights& grads);

}  // namespace ditcache
