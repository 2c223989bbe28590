#pragma once

#include <stdexcept>
#include <string>

namespace fusedet {

// Invalid user-facing configuration (bad flag combo, non-invertible intrinsics, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// Tensor shape mismatch between operands.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Numerical failure during training (NaN loss etc.), carries component identity.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};

// I/O failure (missing manifest, unreadable checkpoint, ...).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline void check_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace fusedet
