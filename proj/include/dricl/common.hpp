#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dricl {

using TokenId = std::int32_t;

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a loss or gradient becomes NaN/inf during training.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Half-open token index range [begin, end).
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  [[nodiscard]] std::size_t size() const { return end - begin; }
  [[nodiscard]] bool empty() const { return end <= begin; }
  [[nodiscard]] bool contains(std::size_t i) const { return i >= begin && i < end; }

  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

// FNV-1a, 64-bit. Stable across platforms, used for seeded partitioning.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0) {
  std::uint64_t h = 14695981039346656037ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Derives an independent seed for a named sub-stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return fnv1a(stream, seed);
}

}  // namespace dricl
