#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sprig {

enum class ErrorCode {
  invalid_value,    // non-finite or out-of-domain numeric input
  config,           // bad configuration / empty grid / range violation
  shape,            // dimension mismatch
  usage,            // API misuse (missing grad, step after terminal, ...)
  numeric,          // NaN/Inf produced during computation
  non_convergence,  // iteration budget exhausted
  stale_input,      // input no longer satisfies its declared precondition
  degenerate,       // degenerate batch (length < 2)
  size,             // problem too large for an exact method
  format,           // file format / version mismatch
  alignment,        // mismatched step grids across runs
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_value: return "invalid_value";
    case ErrorCode::config: return "config";
    case ErrorCode::shape: return "shape";
    case ErrorCode::usage: return "usage";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::non_convergence: return "non_convergence";
    case ErrorCode::stale_input: return "stale_input";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::size: return "size";
    case ErrorCode::format: return "format";
    case ErrorCode::alignment: return "alignment";
  }
  return "unknown";
}

// Deterministic RNG wrapper. mt19937_64 output is standardized, and the
// distributions below are hand-rolled so that streams are identical across
// platforms and standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double next_double() { return std::ldexp(static_cast<double>(gen_() >> 11), -53); }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return gen_() % n; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller; one value per call, the pair partner is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64, used to fan a master seed out into independent run seeds.
inline uint64_t split_seed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over raw bytes; used for parameter checksums and config hashes.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sprig
