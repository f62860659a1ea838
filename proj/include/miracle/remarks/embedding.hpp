#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "miracle/common.hpp"

namespace miracle::remarks {

inline constexpr Index kEmbeddingDim = 768;
inline constexpr std::size_t kMaxTokens = 4096;

/// Lowercased runs of ASCII letters and digits. Bytes >= 0x80 are kept inside
/// tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

struct Embedding {
  VectorXr vector;        // kEmbeddingDim
  bool degenerate = false;  // no tokens: zero vector
  bool truncated = false;   // more than kMaxTokens tokens
  std::vector<std::string> warnings;
};

/// Text to fixed-width vector. Implementations must be deterministic and
/// safe to call concurrently.
class RemarkEmbedder {
 public:
  virtual ~RemarkEmbedder() = default;
  virtual std::string name() const = 0;
  virtual Embedding embed(std::string_view text) const = 0;
  Index output_dim() const { return kEmbeddingDim; }
};

/// Bag of tokens hashed into kEmbeddingDim bins with keyed FNV-1a, then L2
/// normalised.
class HashingEmbedder final : public RemarkEmbedder {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5EEDF00DCAFEULL;

  explicit HashingEmbedder(std::uint64_t seed = kDefaultSeed) : seed_(seed) {}
  std::string name() const override;
  Embedding embed(std::string_view text) const override;
  Index bin(std::string_view token) const;

 private:
  std::uint64_t seed_;
};

/// Client for an embedding service speaking {"input","model"} ->
/// {"data":[{"embedding":[...]}]} (a bare {"embedding":[...]} is accepted too).
class ExternalEmbedder final : public RemarkEmbedder {
 public:
  ExternalEmbedder(std::string url, std::string model, std::string api_key = {},
                   std::chrono::seconds timeout = std::chrono::seconds(30));
  std::string name() const override;
  /// Wrong dimensionality from the service is a ConfigError; transport
  /// failures are RemoteError.
  Embedding embed(std::string_view text) const override;

 private:
  std::string url_, model_, api_key_;
  std::chrono::seconds timeout_;
};

/// Fixed orthogonal kEmbeddingDim x kEmbeddingDim matrix generated once from a
/// seed. Never trained.
class FrozenProjection {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x70B1EC7ULL;

  explicit FrozenProjection(std::uint64_t seed = kDefaultSeed);
  const MatrixXr& matrix() const { return matrix_; }
  std::uint64_t seed() const { return seed_; }
  /// CRC-32 over the matrix bytes, as 8 hex digits.
  std::string checksum() const;

 private:
  std::uint64_t seed_;
  MatrixXr matrix_;
};

std::string matrix_checksum(const MatrixXr& m);

/// f_m: embedder followed by the frozen projection.
class RemarkEncoder {
 public:
  explicit RemarkEncoder(std::shared_ptr<const RemarkEmbedder> embedder = std::make_shared<HashingEmbedder>(),
                         std::shared_ptr<const FrozenProjection> projection = nullptr);

  Embedding encode(std::string_view text) const;
  const RemarkEmbedder& embedder() const { return *embedder_; }
  const FrozenProjection& projection() const { return *projection_; }

 private:
  std::shared_ptr<const RemarkEmbedder> embedder_;
  std::shared_ptr<const FrozenProjection> projection_;
};

}  // namespace miracle::remarks
