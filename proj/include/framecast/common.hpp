#pragma once

// Shared error types, deterministic RNG, and real-number formatting helpers.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace framecast {

// Dimension mismatch between operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Cholesky pivot failure; `pivot` is the offending diagonal index.
struct SingularMatrixError : std::runtime_error {
  std::size_t pivot;
  SingularMatrixError(std::size_t pivot_index, const std::string& message)
      : std::runtime_error(message), pivot(pivot_index) {}
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic RNG. mt19937_64 output is bit-exact across platforms; the
// distributions are hand-rolled because the standard library's are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased uniform index in [0, n).
  std::size_t uniform_index(std::size_t n);

  // Standard normal via Box-Muller; the second draw is cached.
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

// Derive the stream seed of a named component from a root seed.
std::uint64_t split_seed(std::uint64_t root, std::string_view tag);

// 17 significant digits round-trip any double exactly.
std::string format_real(double v);
double parse_real(const std::string& s);

}  // namespace framecast
