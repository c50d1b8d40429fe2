#pragma once

#include <string>

#include "ditcache/errors.hpp"

namespace ditcache {

// The two cacheable sublayers of each transformer block, each sitting
// directly in front of a residual connection.
enum class LayerKind { Attn, Ffn };

// CFG branch. Cache entries are keyed per branch; the two passes at each
// step see different inputs.
enum class Branch { Cond, Uncond };

struct LayerId {
  int block = 0;
  LayerKind kind = LayerKind::Attn;

  bool operator==(const LayerId&) const = default;
};

inline int layer_index(const LayerId& id) {
  return id.block * 2 + (id.kind == LayerKind::Ffn ? 1 : 0);
}

inline LayerId layer_from_index(int idx) {
  return {idx / 2, (idx % 2) ? LayerKind::Ffn : LayerKind::Attn};
}

inline const char* to_string(LayerKind k) {
  return k == LayerKind::Attn ? "attn" : "ffn";
}

inline const char* to_string(Branch b) {
  return b == Branch::Cond ? "cond" : "uncond";
}

// JSON mask key, e.g. "0.attn".
inline std::string layer_key(const LayerId& id) {
  return std::to_string(id.block) + "." + to_string(id.kind);
}

inline LayerId layer_from_key(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw DomainError("bad layer key: " + key);
  const std::string kind = key.substr(dot + 1);
  LayerId id;
  id.block = std::stoi(key.substr(0, dot));
  if (kind == "attn") id.kind = LayerKind::Attn;
  else if (kind == "ffn") id.kind = LayerKind::Ffn;
  else throw DomainError("bad layer kind in key: " + key);
  return id;
}

}  // namespace ditcache
