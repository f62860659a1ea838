#include "miracle/remarks/embedding.hpp"

#include <cstdio>

#include <Eigen/QR>
#include <boost/crc.hpp>
#include <boost/random/normal_distribution.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace miracle::remarks {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80) {
      cur += static_cast<char>(c);
    } else if (c >= 'A' && c <= 'Z') {
      cur += static_cast<char>(c - 'A' + 'a');
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string HashingEmbedder::name() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "hashing-fnv1a-%lld-%s", static_cast<long long>(kEmbeddingDim),
                hex64(seed_).c_str());
  return buf;
}

Index HashingEmbedder::bin(std::string_view token) const {
  return static_cast<Index>(fnv1a64(token, seed_) % static_cast<std::uint64_t>(kEmbeddingDim));
}

Embedding HashingEmbedder::embed(std::string_view text) const {
  Embedding out;
  out.vector = VectorXr::Zero(kEmbeddingDim);
  auto tokens = tokenize(text);
  if (tokens.size() > kMaxTokens) {
    out.truncated = true;
    out.warnings.push_back("remark has " + std::to_string(tokens.size()) + " tokens, truncated to " +
                           std::to_string(kMaxTokens));
    tokens.resize(kMaxTokens);
  }
  for (const auto& t : tokens) out.vector(bin(t)) += 1.0;
  const double norm = out.vector.norm();
  if (norm > 0) {
    out.vector /= norm;
  } else {
    out.degenerate = true;
    out.warnings.push_back("remark has no tokens, embedding is the zero vector");
  }
  return out;
}

ExternalEmbedder::ExternalEmbedder(std::string url, std::string model, std::string api_key,
                                   std::chrono::seconds timeout)
    : url_(std::move(url)), model_(std::move(model)), api_key_(std::move(api_key)), timeout_(timeout) {
  if (url_.find("://") == std::string::npos) throw ConfigError("embedding URL '" + url_ + "' has no scheme");
}

std::string ExternalEmbedder::name() const { return "external:" + model_ + "@" + url_; }

Embedding ExternalEmbedder::embed(std::string_view text) const {
  Embedding out;
  const auto tokens = tokenize(text);
  std::string payload_text(text);
  if (tokens.size() > kMaxTokens) {
    out.truncated = true;
    out.warnings.push_back("remark has " + std::to_string(tokens.size()) + " tokens, truncated to " +
                           std::to_string(kMaxTokens));
    payload_text.clear();
    for (std::size_t i = 0; i < kMaxTokens; ++i) payload_text += (i ? " " : "") + tokens[i];
  }
  const auto scheme = url_.find("://");
  const auto slash = url_.find('/', scheme + 3);
  const std::string base = slash == std::string::npos ? url_ : url_.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : url_.substr(slash);
  httplib::Client client(base);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const nlohmann::json body = {{"input", payload_text}, {"model", model_}};
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) throw RemoteError("embedding service unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw RemoteError("embedding service returned HTTP " + std::to_string(res->status));
  std::vector<double> values;
  try {
    const auto j = nlohmann::json::parse(res->body);
    const auto& e = j.contains("data") ? j.at("data").at(0).at("embedding") : j.at("embedding");
    values = e.get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw RemoteError(std::string("malformed embedding response: ") + e.what());
  }
  if (static_cast<Index>(values.size()) != kEmbeddingDim)
    throw ConfigError("embedding service returned dimension " + std::to_string(values.size()) + ", expected " +
                      std::to_string(kEmbeddingDim));
  out.vector = Eigen::Map<const VectorXr>(values.data(), kEmbeddingDim);
  out.degenerate = tokens.empty();
  return out;
}

FrozenProjection::FrozenProjection(std::uint64_t seed) : seed_(seed) {
  Rng rng(mix_seed(seed));
  boost::random::normal_distribution<double> normal;
  MatrixXr gaussian(kEmbeddingDim, kEmbeddingDim);
  for (Index i = 0; i < gaussian.size(); ++i) gaussian.data()[i] = normal(rng);
  Eigen::HouseholderQR<MatrixXr> qr(gaussian);
  matrix_ = qr.householderQ() * MatrixXr::Identity(kEmbeddingDim, kEmbeddingDim);
}

std::string matrix_checksum(const MatrixXr& m) {
  boost::crc_32_type crc;
  crc.process_bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc.checksum()));
  return buf;
}

std::string FrozenProjection::checksum() const { return matrix_checksum(matrix_); }

namespace {

std::shared_ptr<const FrozenProjection> default_projection() {
  static const auto projection = std::make_shared<const FrozenProjection>();
  return projection;
}

}  // namespace

RemarkEncoder::RemarkEncoder(std::shared_ptr<const RemarkEmbedder> embedder,
                             std::shared_ptr<const FrozenProjection> projection)
    : embedder_(std::move(embedder)), projection_(projection ? std::move(projection) : default_projection()) {
  if (!embedder_) throw ConfigError("RemarkEncoder needs an embedder");
}

Embedding RemarkEncoder::encode(std::string_view text) const {
  auto e = embedder_->embed(text);
  if (e.vector.size() != kEmbeddingDim) throw ConfigError("embedder " + embedder_->name() + " has wrong width");
  e.vector = projection_->matrix() * e.vector;
  return e;
}

}  // namespace miracle::remarks
