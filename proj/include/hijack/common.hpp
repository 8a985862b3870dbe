#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace hijack {

// Thrown for invalid configuration: bad shapes, unknown adapters, malformed
// config files. Maps to exit code 2 in the CLI.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a numerical invariant breaks (non-finite logits or loss).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// All randomness in the toolkit flows through explicitly seeded generators.
using Rng = std::mt19937_64;

// FNV-1a, used for content addressing and parameter checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t h = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

// Strips leading and trailing ASCII whitespace.
std::string strip(const std::string& s);

}  // namespace hijack
