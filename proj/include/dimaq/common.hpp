#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dimaq {

// Error taxonomy. Validation problems (bad inputs, bad config) and numerical
// failures are kept distinct so the CLI can map them to exit codes 1 and 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidHyperparameterError : ValidationError {
  using ValidationError::ValidationError;
};
struct InvalidGraphError : ValidationError {
  using ValidationError::ValidationError;
};
struct InvalidHierarchyError : ValidationError {
  using ValidationError::ValidationError;
};
struct DimensionError : ValidationError {
  using ValidationError::ValidationError;
};
struct NotPositiveDefiniteError : NumericalError {
  NotPositiveDefiniteError(const std::string& msg, int pivot_index)
      : NumericalError(msg), pivot(pivot_index) {}
  int pivot;
};
struct NonConvergenceError : NumericalError {
  using NumericalError::NumericalError;
};

// Counter-based RNG: every draw is a pure function of (seed, stream, counter),
// so parallel and sequential runs produce identical streams. Mixing function is
// splitmix64 applied to the keyed counter.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ull))), ctr_(0) {}

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++ctr_); }

  // uniform in (0,1), never exactly 0 or 1
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal() {
    // Box-Muller, one value per call; implementation-defined std distributions
    // are avoided so outputs are bit-stable across platforms.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  std::uint64_t key_;
  std::uint64_t ctr_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used for content hashes in run manifests.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

}  // namespace dimaq
