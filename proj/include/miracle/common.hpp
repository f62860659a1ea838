#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <boost/random/mersenne_twister.hpp>

namespace miracle {

using Real = double;
using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXr = Matrix<Real>;
using VectorXr = Vector<Real>;

// All stochastic code draws from this engine so that a seed pins every result.
using Rng = boost::random::mt19937_64;

// Error hierarchy. Each family maps to a distinct caller reaction (HTTP status,
// CLI exit code), so keep them separate instead of collapsing to runtime_error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct StructuralError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};
struct IngestionError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct EvaluationError : Error {
  using Error::Error;
};
struct RemoteError : Error {
  using Error::Error;
};
struct GenerationError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};
struct UnsupportedOperation : Error {
  using Error::Error;
};
struct IntegrityError : Error {
  using Error::Error;
};
struct VersionError : Error {
  using Error::Error;
};

/// SplitMix64 finalizer. Used to derive independent sub-seeds from one seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a, optionally keyed by folding `seed` into the offset basis.
/// Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0) {
  std::uint64_t h = 0xCBF29CE484222325ULL ^ seed;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value);

/// Keeps large matrix buffers on the heap instead of fresh mmap pages. Layer
/// noise buffers are reallocated every forward pass, and page faults on
/// them cost more than the arithmetic. Call once at program start.
void configure_allocator();

}  // namespace miracle
