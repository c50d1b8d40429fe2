#pragma once

#include <stdexcept>
#include <string>

namespace ditcache {

// Dimension or shape mismatch between tensors.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument outside its documented domain (t not in [0,1], sway coefficient
// outside [-1,1], invalid config field, ...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lookup of a cache entry that was never written. Always indicates an
// invalid schedule (step 0 must compute for every layer).
struct CacheMissError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Near-zero denominator in a relative-error metric. Calibration rejects
// these instead of clamping: a zero-norm activation means a broken model.
struct DegenerateDenominatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File format / filesystem problems.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ditcache
