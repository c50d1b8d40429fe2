#pragma once

namespace ditcache {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace ditcache
