#include "miracle/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <boost/crc.hpp>

namespace miracle::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kPrefix = sizeof kCheckpointMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

template <typename Derived>
void put_block(std::string& out, const Eigen::PlainObjectBase<Derived>& m) {
  out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(Real));
}

std::uint32_t crc32(const char* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

const std::vector<std::pair<const char*, vb::MlpLayers<Real> MiracleModel::*>>& networks() {
  static const std::vector<std::pair<const char*, vb::MlpLayers<Real> MiracleModel::*>> nets{
      {"clinical", &MiracleModel::clinical},
      {"radiomic", &MiracleModel::radiomic},
      {"classifier", &MiracleModel::classifier}};
  return nets;
}

}  // namespace

std::string serialize_checkpoint(const MiracleModel& model) {
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, member] : networks()) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : model.*member)
      layers.push_back({{"in", layer.in_features()}, {"out", layer.out_features()}});
    shapes[name] = layers;
  }
  nlohmann::json header = {
      {"config", model.config.to_json()},
      {"codec", model.codec.to_json()},
      {"history", model.history.to_json()},
      {"validation_seed", model.validation_seed},
      {"layers", shapes},
      {"parameter_count", model.parameter_count()},
  };
  if (model.remark_encoder) {
    header["embedder"] = model.remark_encoder->embedder().name();
    header["projection_checksum"] = model.remark_encoder->projection().checksum();
  }
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, member] : networks()) {
    for (const auto& layer : model.*member) {
      put_block(out, layer.mu_w);
      put_block(out, layer.rho_w);
      put_block(out, layer.mu_b);
      put_block(out, layer.rho_b);
    }
  }
  put<std::uint32_t>(out, crc32(out.data(), out.size()));
  return out;
}

MiracleModel deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kPrefix + sizeof(std::uint32_t) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw IntegrityError("not a MIRACLE checkpoint (bad magic or truncated)");
  const auto version = get<std::uint32_t>(bytes, sizeof kCheckpointMagic);
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  if (crc32(bytes.data(), body) != get<std::uint32_t>(bytes, body))
    throw IntegrityError("checkpoint checksum mismatch (file is corrupt or was modified)");
  const auto header_len = get<std::uint64_t>(bytes, sizeof kCheckpointMagic + sizeof(std::uint32_t));
  if (header_len > body - kPrefix) throw IntegrityError("checkpoint header length exceeds file size");

  MiracleModel model;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPrefix, header_len));
    model.config = MiracleConfig::from_json(header.at("config"));
    model.codec = data::FeatureCodec::from_json(header.at("codec"));
    model.history = TrainingHistory::from_json(header.at("history"));
    model.validation_seed = header.at("validation_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header is malformed: ") + e.what());
  }

  std::size_t offset = kPrefix + header_len;
  auto take = [&](auto& m, Index rows, Index cols) {
    const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(Real);
    if (offset + n > body) throw IntegrityError("checkpoint parameter block is truncated");
    m.resize(rows, cols);
    std::memcpy(m.data(), bytes.data() + offset, n);
    offset += n;
  };
  try {
    for (const auto& [name, member] : networks()) {
      for (const auto& shape : header.at("layers").at(name)) {
        const Index in = shape.at("in").get<Index>();
        const Index out = shape.at("out").get<Index>();
        if (in < 1 || out < 1) throw IntegrityError("checkpoint layer shape is not positive");
        vb::VariationalLinear<Real> layer;
        take(layer.mu_w, out, in);
        take(layer.rho_w, out, in);
        take(layer.mu_b, out, 1);
        take(layer.rho_b, out, 1);
        (model.*member).push_back(std::move(layer));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint layer table is malformed: ") + e.what());
  }
  if (offset != body) throw IntegrityError("checkpoint has trailing bytes after the parameters");

  const Index clinical_in = static_cast<Index>(model.codec.schema.size());
  try {
    vb::detail::check_chain(model.config.clinical_spec(), model.clinical, clinical_in);
    if (uses_radiomic(model.config.ablation))
      vb::detail::check_chain(model.config.radiomic_spec(), model.radiomic, static_cast<Index>(data::kRadiomicCount));
    else if (!model.radiomic.empty())
      throw ShapeError("radiomic encoder stored for a clinical_only model");
    vb::detail::check_chain(model.config.classifier_spec(), model.classifier, remarks::kEmbeddingDim);
  } catch (const ShapeError& e) {
    throw IntegrityError(std::string("checkpoint parameters do not match its config: ") + e.what());
  }

  if (uses_remark(model.config.ablation)) {
    model.remark_encoder = make_remark_encoder(model.config.embedder);
    const std::string stored = header.value("projection_checksum", "");
    const std::string actual = model.remark_encoder->projection().checksum();
    if (stored != actual)
      throw IntegrityError("frozen projection checksum " + actual + " differs from the checkpoint's " + stored);
  }
  model.prepare();
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const MiracleModel& model) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

MiracleModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace miracle::model
