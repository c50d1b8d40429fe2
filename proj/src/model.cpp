#include "ditcache/model.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>

#include "ditcache/errors.hpp"
#include "ditcache/io.hpp"
#include "ditcache/kernels.hpp"
#include "ditcache/rng.hpp"
#include "ditcache/version.hpp"

namespace ditcache {

namespace {

constexpr float kLnEps = 1e-5f;

// y = x @ w + b. b may be empty for no bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
    throw ShapeError("linear: " + x.shape_str() + " @ " + w.shape_str());
  }
  const int m = x.rows(), k = x.cols(), n = w.cols();
  Tensor y = Tensor::zeros({m, n});
  kernels::matmul(x.data.data(), w.data.data(), y.data.data(), m, k, n);
  if (!b.data.empty()) {
    if (b.numel() != static_cast<size_t>(n)) {
      throw ShapeError("linear: bias " + b.shape_str() + " vs out dim " + std::to_string(n));
    }
    for (int i = 0; i < m; ++i) {
      float* row = y.data.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) row[j] += b.data[static_cast<size_t>(j)];
    }
  }
  return y;
}

// Vector-in, vector-out linear: v[k] @ w[k x n] + b[n].
Tensor linear_vec(const Tensor& v, const Tensor& w, const Tensor& b) {
  Tensor row({1, static_cast<int>(v.numel())}, v.data);
  Tensor y = linear(row, w, b);
  return Tensor({static_cast<int>(y.numel())}, std::move(y.data));
}

// Columns [c0, c0+width) of src as a dense [rows x width] tensor.
Tensor gather_cols(const Tensor& src, int c0, int width) {
  const int rows = src.rows(), cols = src.cols();
  Tensor out = Tensor::zeros({rows, width});
  for (int i = 0; i < rows; ++i) {
    const float* s = src.data.data() + static_cast<size_t>(i) * cols + c0;
    float* d = out.data.data() + static_cast<size_t>(i) * width;
    for (int j = 0; j < width; ++j) d[j] = s[j];
  }
  return out;
}

void scatter_cols(Tensor& dst, const Tensor& src, int c0) {
  const int rows = src.rows(), width = src.cols(), cols = dst.cols();
  for (int i = 0; i < rows; ++i) {
    const float* s = src.data.data() + static_cast<size_t>(i) * width;
    float* d = dst.data.data() + static_cast<size_t>(i) * cols + c0;
    for (int j = 0; j < width; ++j) d[j] = s[j];
  }
}

void scatter_cols_add(Tensor& dst, const Tensor& src, int c0) {
  const int rows = src.rows(), width = src.cols(), cols = dst.cols();
  for (int i = 0; i < rows; ++i) {
    const float* s = src.data.data() + static_cast<size_t>(i) * width;
    float* d = dst.data.data() + static_cast<size_t>(i) * cols + c0;
    for (int j = 0; j < width; ++j) d[j] += s[j];
  }
}

// mod = temb @ mod_w + mod_b; layout [scale_attn, shift_attn, scale_ffn, shift_ffn].
Tensor block_modulation(const BlockWeights& bw, const Tensor& temb) {
  return linear_vec(temb, bw.mod_w, bw.mod_b);
}

// Non-affine LN followed by (1 + scale) * xhat + shift, with scale/shift
// taken from the block's modulation vector. half 0 = attention, 1 = FFN.
Tensor modulated_norm(const Tensor& h, const Tensor& mod, int half,
                      Tensor* xhat_out = nullptr, Tensor* rstd_out = nullptr) {
  const int rows = h.rows(), cols = h.cols();
  Tensor y = Tensor::zeros({rows, cols});
  float* rstd = nullptr;
  float* xhat = nullptr;
  if (rstd_out) {
    *rstd_out = Tensor::zeros({rows});
    rstd = rstd_out->data.data();
  }
  if (xhat_out) {
    *xhat_out = Tensor::zeros({rows, cols});
    xhat = xhat_out->data.data();
  }
  kernels::layer_norm_rows(h.data.data(), y.data.data(), rows, cols,
                           nullptr, nullptr, kLnEps, rstd, xhat);
  const float* sc = mod.data.data() + static_cast<size_t>(half) * 2 * cols;
  const float* sh = sc + cols;
  for (int i = 0; i < rows; ++i) {
    float* row = y.data.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) row[j] = row[j] * (1.0f + sc[j]) + sh[j];
  }
  return y;
}

// concat(x, cond-or-zeros) -> input projection -> + positional embedding.
Tensor input_stream(const Weights& w, const Tensor& x, const Tensor& cond,
                    Branch branch, Tensor* xin_out = nullptr) {
  const int s = x.rows(), in_dim = x.cols();
  Tensor xin = Tensor::zeros({s, 2 * in_dim});
  for (int i = 0; i < s; ++i) {
    float* row = xin.data.data() + static_cast<size_t>(i) * 2 * in_dim;
    const float* xr = x.data.data() + static_cast<size_t>(i) * in_dim;
    for (int j = 0; j < in_dim; ++j) row[j] = xr[j];
    if (branch == Branch::Cond) {
      const float* cr = cond.data.data() + static_cast<size_t>(i) * in_dim;
      for (int j = 0; j < in_dim; ++j) row[in_dim + j] = cr[j];
    }
  }
  Tensor h = linear(xin, w.in_w, w.in_b);
  kernels::add(h.data.data(), w.pos_emb.data.data(), h.data.data(), h.numel());
  if (xin_out) *xin_out = std::move(xin);
  return h;
}

Tensor output_head(const Weights& w, const Tensor& h, Tensor* xhat_out = nullptr,
                   Tensor* rstd_out = nullptr, Tensor* ln_out = nullptr) {
  const int rows = h.rows(), cols = h.cols();
  Tensor ln = Tensor::zeros({rows, cols});
  float* rstd = nullptr;
  float* xhat = nullptr;
  if (rstd_out) {
    *rstd_out = Tensor::zeros({rows});
    rstd = rstd_out->data.data();
  }
  if (xhat_out) {
    *xhat_out = Tensor::zeros({rows, cols});
    xhat = xhat_out->data.data();
  }
  kernels::layer_norm_rows(h.data.data(), ln.data.data(), rows, cols,
                           w.final_gamma.data.data(), w.final_beta.data.data(),
                           kLnEps, rstd, xhat);
  Tensor v = linear(ln, w.out_w, w.out_b);
  if (ln_out) *ln_out = std::move(ln);
  return v;
}

void check_forward_args(const Weights& w, const Tensor& x, float t, const Tensor& cond) {
  const ModelConfig& cfg = w.config;
  if (x.rank() != 2 || x.rows() != cfg.seq_len || x.cols() != cfg.in_dim) {
    throw ShapeError("model_forward: x " + x.shape_str() + ", want [" +
                     std::to_string(cfg.seq_len) + ", " + std::to_string(cfg.in_dim) + "]");
  }
  require_same_shape(x, cond, "model_forward cond");
  if (!(t >= 0.0f && t <= 1.0f)) {
    throw DomainError("model_forward: t=" + std::to_string(t) + " outside [0, 1]");
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (depth < 1 || width < 1 || heads < 1 || ffn_mult < 1 || seq_len < 1 || in_dim < 1) {
    throw DomainError("model config: all dimensions must be >= 1");
  }
  if (width % heads != 0) {
    throw DomainError("model config: width " + std::to_string(width) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (width % 2 != 0) {
    throw DomainError("model config: width must be even for sinusoid features");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"depth", depth},     {"width", width},     {"heads", heads},
          {"ffn_mult", ffn_mult}, {"seq_len", seq_len}, {"in_dim", in_dim}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.depth = j.at("depth").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.in_dim = j.at("in_dim").get<int>();
  c.validate();
  return c;
}

Weights Weights::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const int w = cfg.width, i = cfg.in_dim, f = cfg.ffn_mult * cfg.width;
  Weights out;
  out.config = cfg;
  out.in_w = Tensor::zeros({2 * i, w});
  out.in_b = Tensor::zeros({w});
  out.pos_emb = Tensor::zeros({cfg.seq_len, w});
  out.t_w = Tensor::zeros({w, w});
  out.t_b = Tensor::zeros({w});
  out.blocks.resize(static_cast<size_t>(cfg.depth));
  for (auto& b : out.blocks) {
    b.mod_w = Tensor::zeros({w, 4 * w});
    b.mod_b = Tensor::zeros({4 * w});
    b.qkv_w = Tensor::zeros({w, 3 * w});
    b.qkv_b = Tensor::zeros({3 * w});
    b.attn_out_w = Tensor::zeros({w, w});
    b.attn_out_b = Tensor::zeros({w});
    b.ffn_w1 = Tensor::zeros({w, f});
    b.ffn_b1 = Tensor::zeros({f});
    b.ffn_w2 = Tensor::zeros({f, w});
    b.ffn_b2 = Tensor::zeros({w});
  }
  out.final_gamma = Tensor::zeros({w});
  out.final_beta = Tensor::zeros({w});
  out.out_w = Tensor::zeros({w, i});
  out.out_b = Tensor::zeros({i});
  return out;
}

Weights Weights::init(const ModelConfig& cfg, uint64_t seed) {
  Weights w = zeros(cfg);
  // Matrices get normal(0, 1/sqrt(fan_in)); modulation starts at zero so
  // every block begins as a plain LN; final norm starts as identity.
  auto params = w.named_params();
  for (size_t ordinal = 0; ordinal < params.size(); ++ordinal) {
    auto& [name, tensor] = params[ordinal];
    const bool is_matrix = tensor->rank() == 2;
    const bool is_mod = name.find(".mod.") != std::string::npos;
    if (name == "pos_emb") {
      Rng rng = Rng::substream(seed, "init", ordinal);
      *tensor = Tensor::randn(tensor->shape, rng, 0.02f);
    } else if (is_matrix && !is_mod) {
      Rng rng = Rng::substream(seed, "init", ordinal);
      const float stddev = 1.0f / std::sqrt(static_cast<float>(tensor->rows()));
      *tensor = Tensor::randn(tensor->shape, rng, stddev);
    } else if (name == "final_norm.gamma") {
      *tensor = Tensor::full(tensor->shape, 1.0f);
    }
    // biases, mod weights, final beta stay zero
  }
  return w;
}

std::vector<std::pair<std::string, Tensor*>> Weights::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("in_proj.w", &in_w);
  out.emplace_back("in_proj.b", &in_b);
  out.emplace_back("pos_emb", &pos_emb);
  out.emplace_back("t_proj.w", &t_w);
  out.emplace_back("t_proj.b", &t_b);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    BlockWeights& b = blocks[i];
    out.emplace_back(p + "mod.w", &b.mod_w);
    out.emplace_back(p + "mod.b", &b.mod_b);
    out.emplace_back(p + "attn.qkv_w", &b.qkv_w);
    out.emplace_back(p + "attn.qkv_b", &b.qkv_b);
    out.emplace_back(p + "attn.out_w", &b.attn_out_w);
    out.emplace_back(p + "attn.out_b", &b.attn_out_b);
    out.emplace_back(p + "ffn.w1", &b.ffn_w1);
    out.emplace_back(p + "ffn.b1", &b.ffn_b1);
    out.emplace_back(p + "ffn.w2", &b.ffn_w2);
    out.emplace_back(p + "ffn.b2", &b.ffn_b2);
  }
  out.emplace_back("final_norm.gamma", &final_gamma);
  out.emplace_back("final_norm.beta", &final_beta);
  out.emplace_back("out_proj.w", &out_w);
  out.emplace_back("out_proj.b", &out_b);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Weights::named_params() const {
  auto mut = const_cast<Weights*>(this)->named_params();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

std::string weights_checksum(const Weights& w) {
  uint64_t h = fnv1a64(std::string_view{});
  for (const auto& [name, t] : w.named_params()) {
    h = fnv1a64(name.data(), name.size(), h);
    const std::string bytes = dten_encode(*t);
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::filesystem::path& dir, const Weights& w,
                     uint64_t train_seed) {
  std::filesystem::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : w.named_params()) {
    const std::string file = name + ".dten";
    const std::string bytes = dten_encode(*t);
    atomic_write_file(dir / file, bytes);
    params.push_back({{"name", name}, {"file", file}, {"checksum", bytes_checksum(bytes)}});
  }
  nlohmann::json manifest = {
      {"format", "ditcache-checkpoint"},
      {"version", 1},
      {"tool_version", kToolVersion},
      {"rng_algorithm", Rng::kAlgorithm},
      {"train_seed", train_seed},
      {"model_config", w.config.to_json()},
      {"params", params},
  };
  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Weights load_checkpoint(const std::filesystem::path& manifest_or_dir) {
  namespace fs = std::filesystem;
  fs::path manifest_path = manifest_or_dir;
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": bad manifest json: " + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != "ditcache-checkpoint") {
      throw IoError(manifest_path.string() + ": not a checkpoint manifest");
    }
    if (manifest.at("version").get<int>() != 1) {
      throw IoError(manifest_path.string() + ": unsupported checkpoint version");
    }
    Weights w = Weights::zeros(ModelConfig::from_json(manifest.at("model_config")));
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : w.named_params()) by_name[name] = t;
    std::set<std::string> seen;
    const fs::path dir = manifest_path.parent_path();
    for (const auto& p : manifest.at("params")) {
      const auto name = p.at("name").get<std::string>();
      const auto it = by_name.find(name);
      if (it == by_name.end()) {
        throw IoError(manifest_path.string() + ": unknown parameter " + name);
      }
      const fs::path file = dir / p.at("file").get<std::string>();
      const std::string bytes = read_file(file);
      if (bytes_checksum(bytes) != p.at("checksum").get<std::string>()) {
        throw IoError(file.string() + ": checksum mismatch");
      }
      Tensor t = dten_decode(bytes);
      if (!t.same_shape(*it->second)) {
        throw IoError(file.string() + ": shape " + t.shape_str() + " does not match " +
                      name + " " + it->second->shape_str());
      }
      *it->second = std::move(t);
      seen.insert(name);
    }
    if (seen.size() != by_name.size()) {
      throw IoError(manifest_path.string() + ": manifest covers " +
                    std::to_string(seen.size()) + " of " + std::to_string(by_name.size()) +
                    " parameters");
    }
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": bad manifest field: " + e.what());
  }
}

CacheState::CacheState(int depth) : depth_(depth) {
  const size_t slots = static_cast<size_t>(depth) * 4;  // 2 sublayers x 2 branches
  entries_.resize(slots);
  present_.assign(slots, 0);
  computes_slot_.assign(slots, 0);
  hits_slot_.assign(slots, 0);
}

size_t CacheState::slot(const LayerId& id, Branch b) const {
  return static_cast<size_t>(layer_index(id)) * 2 + (b == Branch::Uncond ? 1 : 0);
}

bool CacheState::has(const LayerId& id, Branch b) const { return present_[slot(id, b)] != 0; }

const Tensor& CacheState::get(const LayerId& id, Branch b, int step) const {
  const size_t s = slot(id, b);
  if (!present_[s]) {
    throw CacheMissError("cache miss: block " + std::to_string(id.block) + " " +
                         to_string(id.kind) + " " + to_string(b) + " at step " +
                         std::to_string(step) + " (schedule must compute step 0)");
  }
  return entries_[s];
}

void CacheState::put(const LayerId& id, Branch b, const Tensor& value) {
  const size_t s = slot(id, b);
  entries_[s] = value;
  present_[s] = 1;
}

void CacheState::note_compute(const LayerId& id, Branch b) {
  ++computes_;
  ++computes_slot_[slot(id, b)];
}

void CacheState::note_hit(const LayerId& id, Branch b) {
  ++hits_;
  ++hits_slot_[slot(id, b)];
}

uint64_t CacheState::computes_for(const LayerId& id, Branch b) const {
  return computes_slot_[slot(id, b)];
}

uint64_t CacheState::hits_for(const LayerId& id, Branch b) const {
  return hits_slot_[slot(id, b)];
}

Tensor sinusoid_features(float t, int width) {
  if (!(t >= 0.0f && t <= 1.0f)) {
    throw DomainError("timestep_embed: t=" + std::to_string(t) + " outside [0, 1]");
  }
  if (width < 2 || width % 2 != 0) {
    throw DomainError("timestep_embed: width must be even and >= 2");
  }
  const int half = width / 2;
  Tensor out = Tensor::zeros({width});
  for (int k = 0; k < half; ++k) {
    const double omega =
        half > 1 ? std::pow(1000.0, static_cast<double>(k) / (half - 1)) : 1.0;
    const double phase = static_cast<double>(t) * omega;
    out.data[static_cast<size_t>(k)] = static_cast<float>(std::sin(phase));
    out.data[static_cast<size_t>(half + k)] = static_cast<float>(std::cos(phase));
  }
  return out;
}

Tensor timestep_embed(const Weights& w, float t) {
  const Tensor feats = sinusoid_features(t, w.config.width);
  Tensor pre = linear_vec(feats, w.t_w, w.t_b);
  Tensor out = Tensor::zeros(pre.shape);
  kernels::gelu(pre.data.data(), out.data.data(), pre.numel());
  return out;
}

Tensor attn_sublayer(const BlockWeights& bw, const ModelConfig& cfg,
                     const Tensor& x, AttnActs* acts) {
  if (x.rank() != 2 || x.cols() != cfg.width) {
    throw ShapeError("attn_sublayer: input " + x.shape_str() + ", want cols " +
                     std::to_string(cfg.width));
  }
  const int s = x.rows(), w = cfg.width, hd = cfg.head_dim();
  const float scl = 1.0f / std::sqrt(static_cast<float>(hd));
  Tensor qkv = linear(x, bw.qkv_w, bw.qkv_b);  // [s x 3w]
  Tensor ctx = Tensor::zeros({s, w});
  if (acts) acts->probs.clear();
  for (int h = 0; h < cfg.heads; ++h) {
    Tensor q = gather_cols(qkv, h * hd, hd);
    Tensor k = gather_cols(qkv, w + h * hd, hd);
    Tensor v = gather_cols(qkv, 2 * w + h * hd, hd);
    Tensor scores = Tensor::zeros({s, s});
    kernels::matmul_a_bt(q.data.data(), k.data.data(), scores.data.data(), s, hd, s);
    kernels::scale(scores.data.data(), scl, scores.data.data(), scores.numel());
    Tensor probs = Tensor::zeros({s, s});
    kernels::softmax_rows(scores.data.data(), probs.data.data(), s, s);
    Tensor c = Tensor::zeros({s, hd});
    kernels::matmul(probs.data.data(), v.data.data(), c.data.data(), s, s, hd);
    scatter_cols(ctx, c, h * hd);
    if (acts) acts->probs.push_back(std::move(probs));
  }
  Tensor out = linear(ctx, bw.attn_out_w, bw.attn_out_b);
  check_finite(out, "attn_sublayer output");
  if (acts) {
    acts->qkv = std::move(qkv);
    acts->ctx = std::move(ctx);
  }
  return out;
}

Tensor ffn_sublayer(const BlockWeights& bw, const Tensor& x, FfnActs* acts) {
  if (x.rank() != 2 || x.cols() != bw.ffn_w1.rows()) {
    throw ShapeError("ffn_sublayer: input " + x.shape_str() + ", want cols " +
                     std::to_string(bw.ffn_w1.rows()));
  }
  Tensor pre = linear(x, bw.ffn_w1, bw.ffn_b1);
  Tensor post = Tensor::zeros(pre.shape);
  kernels::gelu(pre.data.data(), post.data.data(), pre.numel());
  Tensor out = linear(post, bw.ffn_w2, bw.ffn_b2);
  check_finite(out, "ffn_sublayer output");
  if (acts) {
    acts->pre = std::move(pre);
    acts->post = std::move(post);
  }
  return out;
}

Tensor block_forward(const Weights& w, int block, const Tensor& x,
                     const Tensor& t_embed, Branch branch,
                     const StepCachePolicy& policy, CacheState& cache,
                     const SublayerTap* tap) {
  const BlockWeights& bw = w.blocks[static_cast<size_t>(block)];
  std::optional<Tensor> mod;  // skipped entirely when both sublayers hit cache
  Tensor h = x;
  for (const LayerKind kind : {LayerKind::Attn, LayerKind::Ffn}) {
    const LayerId id{block, kind};
    if (policy.cached(id)) {
      add_inplace(h, cache.get(id, branch, policy.step));
      cache.note_hit(id, branch);
      continue;
    }
    if (!mod) mod = block_modulation(bw, t_embed);
    Tensor hin = modulated_norm(h, *mod, kind == LayerKind::Ffn ? 1 : 0);
    Tensor out = kind == LayerKind::Attn ? attn_sublayer(bw, w.config, hin)
                                         : ffn_sublayer(bw, hin);
    cache.put(id, branch, out);
    cache.note_compute(id, branch);
    if (tap) (*tap)(id, branch, out);
    add_inplace(h, out);
  }
  return h;
}

Tensor block_forward_reference(const Weights& w, int block, const Tensor& x,
                               const Tensor& t_embed, Branch branch,
                               const SublayerTap* tap) {
  const BlockWeights& bw = w.blocks[static_cast<size_t>(block)];
  const Tensor mod = block_modulation(bw, t_embed);
  Tensor h = x;
  {
    Tensor hin = modulated_norm(h, mod, 0);
    Tensor out = attn_sublayer(bw, w.config, hin);
    if (tap) (*tap)({block, LayerKind::Attn}, branch, out);
    add_inplace(h, out);
  }
  {
    Tensor hin = modulated_norm(h, mod, 1);
    Tensor out = ffn_sublayer(bw, hin);
    if (tap) (*tap)({block, LayerKind::Ffn}, branch, out);
    add_inplace(h, out);
  }
  return h;
}

Tensor model_forward(const Weights& w, const Tensor& x, float t,
                     const Tensor& cond, Branch branch,
                     const StepCachePolicy& policy, CacheState& cache,
                     const SublayerTap* tap) {
  check_forward_args(w, x, t, cond);
  Tensor h = input_stream(w, x, cond, branch);
  const Tensor temb = timestep_embed(w, t);
  for (int b = 0; b < w.config.depth; ++b) {
    h = block_forward(w, b, h, temb, branch, policy, cache, tap);
  }
  Tensor v = output_head(w, h);
  check_finite(v, "model_forward output");
  return v;
}

Tensor model_forward_reference(const Weights& w, const Tensor& x, float t,
                               const Tensor& cond, Branch branch,
                               const SublayerTap* tap) {
  check_forward_args(w, x, t, cond);
  Tensor h = input_stream(w, x, cond, branch);
  const Tensor temb = timestep_embed(w, t);
  for (int b = 0; b < w.config.depth; ++b) {
    h = block_forward_reference(w, b, h, temb, branch, tap);
  }
  Tensor v = output_head(w, h);
  check_finite(v, "model_forward output");
  return v;
}

// ---------------------------------------------------------------------------
// Training path
// ---------------------------------------------------------------------------

ForwardActs model_forward_train(const Weights& w, const Tensor& x,
                                const Tensor& cond, float t) {
  check_forward_args(w, x, t, cond);
  const ModelConfig& cfg = w.config;
  ForwardActs a;
  Tensor h = input_stream(w, x, cond, Branch::Cond, &a.xin);
  a.h0 = h;
  a.tfeat = sinusoid_features(t, cfg.width);
  a.t_pre = linear_vec(a.tfeat, w.t_w, w.t_b);
  a.temb = Tensor::zeros(a.t_pre.shape);
  kernels::gelu(a.t_pre.data.data(), a.temb.data.data(), a.t_pre.numel());
  a.blocks.resize(static_cast<size_t>(cfg.depth));
  for (int bi = 0; bi < cfg.depth; ++bi) {
    const BlockWeights& bw = w.blocks[static_cast<size_t>(bi)];
    BlockActs& ba = a.blocks[static_cast<size_t>(bi)];
    ba.block_in = h;
    ba.mod = block_modulation(bw, a.temb);
    ba.attn_in = modulated_norm(h, ba.mod, 0, &ba.ln1_xhat, &ba.ln1_rstd);
    ba.attn_out = attn_sublayer(bw, cfg, ba.attn_in, &ba.attn);
    ba.h_mid = add(h, ba.attn_out);
    ba.ffn_in = modulated_norm(ba.h_mid, ba.mod, 1, &ba.ln2_xhat, &ba.ln2_rstd);
    ba.ffn_out = ffn_sublayer(bw, ba.ffn_in, &ba.ffn);
    h = add(ba.h_mid, ba.ffn_out);
  }
  a.h_final = h;
  a.v = output_head(w, h, &a.lnf_xhat, &a.lnf_rstd, &a.lnf_out);
  check_finite(a.v, "model_forward output");
  return a;
}

namespace {

Tensor mm(const Tensor& x, const Tensor& y) {
  Tensor out = Tensor::zeros({x.rows(), y.cols()});
  kernels::matmul(x.data.data(), y.data.data(), out.data.data(), x.rows(), x.cols(), y.cols());
  return out;
}

// x [m x k] @ y^T where y is [n x k] -> [m x n]
Tensor mm_bt(const Tensor& x, const Tensor& y) {
  Tensor out = Tensor::zeros({x.rows(), y.rows()});
  kernels::matmul_a_bt(x.data.data(), y.data.data(), out.data.data(), x.rows(), x.cols(),
                       y.rows());
  return out;
}

// g += x^T @ y where x is [k x m], y is [k x n]
void acc_at_b(const Tensor& x, const Tensor& y, Tensor& g) {
  Tensor tmp = Tensor::zeros({x.cols(), y.cols()});
  kernels::matmul_at_b(x.data.data(), y.data.data(), tmp.data.data(), x.cols(), x.rows(),
                       y.cols());
  kernels::axpy(g.data.data(), 1.0f, tmp.data.data(), g.numel());
}

// g[j] += sum_i x[i][j]
void acc_colsum(const Tensor& x, Tensor& g) {
  const int rows = x.rows(), cols = x.cols();
  for (int j = 0; j < cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < rows; ++i) s += x.at(i, j);
    g.data[static_cast<size_t>(j)] += static_cast<float>(s);
  }
}

// g += outer(v, d) for vectors v [m], d [n] into g [m x n]
void acc_outer(const Tensor& v, const Tensor& d, Tensor& g) {
  const int m = static_cast<int>(v.numel()), n = static_cast<int>(d.numel());
  for (int i = 0; i < m; ++i) {
    const float vi = v.data[static_cast<size_t>(i)];
    float* row = g.data.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) row[j] += vi * d.data[static_cast<size_t>(j)];
  }
}

// Backward of non-affine LN given dL/dxhat. Population variance.
Tensor ln_backward(const Tensor& dxhat, const Tensor& xhat, const Tensor& rstd) {
  const int rows = dxhat.rows(), cols = dxhat.cols();
  Tensor dx = Tensor::zeros({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const float* dxh = dxhat.data.data() + static_cast<size_t>(i) * cols;
    const float* xh = xhat.data.data() + static_cast<size_t>(i) * cols;
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < cols; ++j) {
      m1 += dxh[j];
      m2 += static_cast<double>(dxh[j]) * xh[j];
    }
    m1 /= cols;
    m2 /= cols;
    const float r = rstd.data[static_cast<size_t>(i)];
    float* out = dx.data.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) {
      out[j] = r * static_cast<float>(dxh[j] - m1 - xh[j] * m2);
    }
  }
  return dx;
}

// Backward through row softmax: ds = p * (dp - rowsum(dp * p)).
Tensor softmax_backward(const Tensor& dp, const Tensor& p) {
  const int rows = dp.rows(), cols = dp.cols();
  Tensor ds = Tensor::zeros({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const float* dpi = dp.data.data() + static_cast<size_t>(i) * cols;
    const float* pi = p.data.data() + static_cast<size_t>(i) * cols;
    double dot = 0.0;
    for (int j = 0; j < cols; ++j) dot += static_cast<double>(dpi[j]) * pi[j];
    float* out = ds.data.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) {
      out[j] = pi[j] * static_cast<float>(dpi[j] - dot);
    }
  }
  return ds;
}

// Backward of hmod = xhat * (1 + scale) + shift. Accumulates the scale and
// shift gradients into the right quarters of d_mod, returns dL/dxhat.
Tensor modulated_norm_backward(const Tensor& d_out, const Tensor& xhat, int half,
                               const Tensor& mod, Tensor& d_mod) {
  const int rows = d_out.rows(), cols = d_out.cols();
  const float* sc = mod.data.data() + static_cast<size_t>(half) * 2 * cols;
  float* d_sc = d_mod.data.data() + static_cast<size_t>(half) * 2 * cols;
  float* d_sh = d_sc + cols;
  Tensor dxhat = Tensor::zeros({rows, cols});
  for (int j = 0; j < cols; ++j) {
    double gs = 0.0, gb = 0.0;
    for (int i = 0; i < rows; ++i) {
      const float d = d_out.at(i, j);
      gs += static_cast<double>(d) * xhat.at(i, j);
      gb += d;
      dxhat.at(i, j) = d * (1.0f + sc[j]);
    }
    d_sc[j] += static_cast<float>(gs);
    d_sh[j] += static_cast<float>(gb);
  }
  return dxhat;
}

}  // namespace

void model_backward(const Weights& w, const ForwardActs& a, const Tensor& dv,
                    Weights& grads) {
  const ModelConfig& cfg = w.config;
  const int wd = cfg.width, hd = cfg.head_dim();
  require_same_shape(dv, a.v, "model_backward dv");

  // output head
  acc_at_b(a.lnf_out, dv, grads.out_w);
  acc_colsum(dv, grads.out_b);
  Tensor d_ln = mm_bt(dv, w.out_w);  // out_w is [wd x in_dim]; dv @ out_w^T
  // affine LN: y = xhat * gamma + beta
  Tensor d_xhat = Tensor::zeros(d_ln.shape);
  for (int i = 0; i < d_ln.rows(); ++i) {
    for (int j = 0; j < wd; ++j) {
      const float g = d_ln.at(i, j);
      grads.final_gamma.data[static_cast<size_t>(j)] += g * a.lnf_xhat.at(i, j);
      grads.final_beta.data[static_cast<size_t>(j)] += g;
      d_xhat.at(i, j) = g * w.final_gamma.data[static_cast<size_t>(j)];
    }
  }
  Tensor dh = ln_backward(d_xhat, a.lnf_xhat, a.lnf_rstd);

  Tensor d_temb = Tensor::zeros({wd});
  for (int bi = cfg.depth - 1; bi >= 0; --bi) {
    const BlockWeights& bw = w.blocks[static_cast<size_t>(bi)];
    BlockWeights& gb = grads.blocks[static_cast<size_t>(bi)];
    const BlockActs& ba = a.blocks[static_cast<size_t>(bi)];
    Tensor d_mod = Tensor::zeros({4 * wd});

    // h_out = h_mid + ffn_out
    const Tensor& d_ffn_out = dh;  // alias; dh doubles as d_h_mid accumulator below
    acc_at_b(ba.ffn.post, d_ffn_out, gb.ffn_w2);
    acc_colsum(d_ffn_out, gb.ffn_b2);
    Tensor d_post = mm_bt(d_ffn_out, bw.ffn_w2);
    Tensor d_pre = Tensor::zeros(d_post.shape);
    kernels::gelu_grad(ba.ffn.pre.data.data(), d_post.data.data(), d_pre.data.data(),
                       d_pre.numel());
    acc_at_b(ba.ffn_in, d_pre, gb.ffn_w1);
    acc_colsum(d_pre, gb.ffn_b1);
    Tensor d_ffn_in = mm_bt(d_pre, bw.ffn_w1);
    Tensor d_xhat2 = modulated_norm_backward(d_ffn_in, ba.ln2_xhat, 1, ba.mod, d_mod);
    Tensor dh_mid = ln_backward(d_xhat2, ba.ln2_xhat, ba.ln2_rstd);
    add_inplace(dh_mid, dh);  // residual branch

    // h_mid = h + attn_out
    const Tensor& d_attn_out = dh_mid;
    acc_at_b(ba.attn.ctx, d_attn_out, gb.attn_out_w);
    acc_colsum(d_attn_out, gb.attn_out_b);
    Tensor d_ctx = mm_bt(d_attn_out, bw.attn_out_w);
    const int s = d_ctx.rows();
    Tensor d_qkv = Tensor::zeros({s, 3 * wd});
    const float scl = 1.0f / std::sqrt(static_cast<float>(hd));
    for (int h = 0; h < cfg.heads; ++h) {
      const Tensor& p = ba.attn.probs[static_cast<size_t>(h)];
      Tensor q = gather_cols(ba.attn.qkv, h * hd, hd);
      Tensor k = gather_cols(ba.attn.qkv, wd + h * hd, hd);
      Tensor v = gather_cols(ba.attn.qkv, 2 * wd + h * hd, hd);
      Tensor d_ctx_h = gather_cols(d_ctx, h * hd, hd);
      // ctx_h = p @ v
      Tensor d_p = mm_bt(d_ctx_h, v);  // v [s x hd] -> d_ctx_h @ v^T
      Tensor d_v = Tensor::zeros({s, hd});
      kernels::matmul_at_b(p.data.data(), d_ctx_h.data.data(), d_v.data.data(), s, s, hd);
      Tensor d_scores = softmax_backward(d_p, p);
      kernels::scale(d_scores.data.data(), scl, d_scores.data.data(), d_scores.numel());
      // scores = (q @ k^T) * scl
      Tensor d_q = mm(d_scores, k);
      Tensor d_k = Tensor::zeros({s, hd});
      kernels::matmul_at_b(d_scores.data.data(), q.data.data(), d_k.data.data(), s, s, hd);
      scatter_cols_add(d_qkv, d_q, h * hd);
      scatter_cols_add(d_qkv, d_k, wd + h * hd);
      scatter_cols_add(d_qkv, d_v, 2 * wd + h * hd);
    }
    acc_at_b(ba.attn_in, d_qkv, gb.qkv_w);
    acc_colsum(d_qkv, gb.qkv_b);
    Tensor d_attn_in = mm_bt(d_qkv, bw.qkv_w);
    Tensor d_xhat1 = modulated_norm_backward(d_attn_in, ba.ln1_xhat, 0, ba.mod, d_mod);
    Tensor dh_in = ln_backward(d_xhat1, ba.ln1_xhat, ba.ln1_rstd);
    add_inplace(dh_in, dh_mid);  // residual branch

    // mod = temb @ mod_w + mod_b
    acc_outer(a.temb, d_mod, gb.mod_w);
    kernels::axpy(gb.mod_b.data.data(), 1.0f, d_mod.data.data(), d_mod.numel());
    Tensor d_mod_row({1, 4 * wd}, d_mod.data);
    Tensor d_temb_row = mm_bt(d_mod_row, bw.mod_w);
    kernels::axpy(d_temb.data.data(), 1.0f, d_temb_row.data.data(), d_temb.numel());

    dh = std::move(dh_in);
  }

  // h0 = xin @ in_w + in_b + pos_emb
  acc_at_b(a.xin, dh, grads.in_w);
  acc_colsum(dh, grads.in_b);
  kernels::axpy(grads.pos_emb.data.data(), 1.0f, dh.data.data(), dh.numel());

  // temb = gelu(tfeat @ t_w + t_b)
  Tensor d_t_pre = Tensor::zeros({wd});
  kernels::gelu_grad(a.t_pre.data.data(), d_temb.data.data(), d_t_pre.data.data(),
                     d_t_pre.numel());
  acc_outer(a.tfeat, d_t_pre, grads.t_w);
  kernels::axpy(grads.t_b.data.data(), 1.0f, d_t_pre.data.data(), d_t_pre.numel());
}

}  // namespace ditcache
