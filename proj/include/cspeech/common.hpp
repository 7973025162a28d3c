#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cspeech {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unknown enum name.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data. Carries the 1-based line number when known (0 otherwise).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Backend unreachable or timed out. Callers may retry.
class TransportError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class AuthorizationError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Seeding. Every randomized stage draws from a sub-seed derived from the
// experiment seed and a stable stage name, so stages can be re-run alone.

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::string_view stage);

/// Small deterministic generator. Output is identical on every platform,
/// unlike the standard distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64(state_);
  }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  /// Uniform in [0, n). n must be positive.
  std::size_t index(std::size_t n);

 private:
  std::uint64_t state_;
};

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Shortest round-trip decimal form of a double. Used by every CSV writer so
/// that reruns are byte-identical.
std::string format_double(double v);

}  // namespace cspeech
