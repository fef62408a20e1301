#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace xal {

// Error taxonomy. The CLI maps these onto stable exit codes:
// usage errors -> 2, validation/config/parse -> 3, everything else -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct CapacityError : Error {
  using Error::Error;
};
struct TransportError : Error {
  using Error::Error;
};
struct OracleError : Error {
  using Error::Error;
};
struct DegenerateInputError : Error {
  using Error::Error;
};
struct AggregationError : Error {
  using Error::Error;
};

// FNV-1a, used for stable content fingerprints and the hashing tokenizer.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  // splitmix64-style mix; order sensitive.
  uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

// All seeded randomness in the project goes through mt19937_64 so that
// runs are reproducible across platforms with the same standard library.
using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng{seed}; }

// Derives a stream-specific seed so independent consumers (per round,
// per candidate, per epoch) never share a generator.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  return hash_combine(base, stream);
}

inline uint64_t derive_seed(uint64_t base, std::string_view stream) {
  return hash_combine(base, fnv1a(stream));
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be
// written to pre-sized slots so the outcome is independent of scheduling.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);
void append_line(const std::filesystem::path& path, std::string_view line);

// Shortest round-trip decimal form of a double; stable on one platform,
// used everywhere a float lands in a CSV/JSON artifact.
std::string format_double(double v);

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace xal
