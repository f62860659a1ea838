#include "miracle/model/model.hpp"

#include <cmath>

#include "miracle/data/csv_io.hpp"

namespace miracle::model {

nlohmann::json TrainingHistory::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) rows.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_auc", e.val_auc}});
  return {{"epochs", rows},
          {"best_epoch", best_epoch},
          {"best_val_auc", best_val_auc},
          {"stopped_early", stopped_early}};
}

TrainingHistory TrainingHistory::from_json(const nlohmann::json& j) {
  TrainingHistory h;
  try {
    for (const auto& row : j.at("epochs"))
      h.epochs.push_back({row.at("epoch").get<int>(), row.at("train_loss").get<double>(), row.at("val_auc").get<double>()});
    h.best_epoch = j.at("best_epoch").get<int>();
    h.best_val_auc = j.at("best_val_auc").get<double>();
    h.stopped_early = j.at("stopped_early").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed training history: ") + e.what());
  }
  return h;
}

std::string TrainingHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_auc\n";
  for (const auto& e : epochs)
    out += std::to_string(e.epoch) + "," + data::format_double(e.train_loss) + "," + data::format_double(e.val_auc) + "\n";
  return out;
}

void MiracleModel::prepare() {
  auto s = std::make_shared<NetworkScales>();
  s->clinical = vb::posterior_scales(clinical);
  s->radiomic = vb::posterior_scales(radiomic);
  s->classifier = vb::posterior_scales(classifier);
  scales_ = std::move(s);
}

const NetworkScales& MiracleModel::scales() const {
  if (!scales_) throw StructuralError("model is not prepared; call prepare() after building or loading");
  return *scales_;
}

Index MiracleModel::parameter_count() const {
  Index n = 0;
  for (const auto* net : {&clinical, &radiomic, &classifier})
    for (const auto& layer : *net) n += layer.parameter_count();
  return n;
}

MiracleModel build_model(const MiracleConfig& config, data::FeatureCodec codec,
                         std::shared_ptr<const remarks::RemarkEncoder> remark_encoder) {
  config.validate();
  MiracleModel m;
  m.config = config;
  const Index clinical_in = static_cast<Index>(codec.schema.size());
  m.codec = std::move(codec);
  Rng rng(mix_seed(config.seed, 10));
  const Real rho = config.rho_init;
  m.clinical = vb::build_mlp<Real>(config.clinical_spec(), clinical_in, rng, rho);
  if (uses_radiomic(config.ablation))
    m.radiomic = vb::build_mlp<Real>(config.radiomic_spec(), static_cast<Index>(data::kRadiomicCount), rng, rho);
  m.classifier = vb::build_mlp<Real>(config.classifier_spec(), remarks::kEmbeddingDim, rng, rho);
  if (uses_remark(config.ablation))
    m.remark_encoder = remark_encoder ? std::move(remark_encoder) : make_remark_encoder(config.embedder);
  m.prepare();
  return m;
}

namespace detail {

MatrixXr unit_columns(const MatrixXr& x) {
  MatrixXr y = x;
  for (Index j = 0; j < y.cols(); ++j) {
    const Real n = y.col(j).norm();
    if (n > 0) y.col(j) /= n;
  }
  return y;
}

MatrixXr unit_columns_backward(const MatrixXr& x, const MatrixXr& g) {
  MatrixXr dx = MatrixXr::Zero(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const Real n = x.col(j).norm();
    if (!(n > 0)) continue;
    const VectorXr y = x.col(j) / n;
    dx.col(j) = (g.col(j) - y * y.dot(g.col(j))) / n;
  }
  return dx;
}

MatrixXr fuse_sample(const MiracleConfig& config, const MatrixXr& e_c, const MatrixXr& e_r, const MatrixXr& e_m) {
  const FusionWeights w = config.effective_fusion();
  auto prep = [&](const MatrixXr& e) { return config.normalize_embeddings ? unit_columns(e) : e; };
  MatrixXr z = w.w_c * prep(e_c);
  if (e_r.size() > 0) {
    if (e_r.rows() != z.rows() || e_r.cols() != z.cols()) throw ShapeError("fuse: radiomic embedding shape");
    z += w.w_r * prep(e_r);
  }
  if (e_m.size() > 0) {
    if (e_m.rows() != z.rows()) throw ShapeError("fuse: remark embedding height");
    if (e_m.cols() == z.cols())
      z += w.w_m * prep(e_m);
    else if (e_m.cols() == 1)
      z += (w.w_m * prep(e_m)).replicate(1, z.cols());
    else
      throw ShapeError("fuse: remark embedding width");
  }
  return z;
}

}  // namespace detail

namespace {

struct ChannelSamples {
  std::vector<MatrixXr> clinical;  // S entries of [768 x n]
  std::vector<MatrixXr> radiomic;  // empty under clinical_only
};

// Streams 1, 2 and 3 of the request seed drive the clinical encoder, the
// radiomic encoder and the classifier. Intervention replays stream 3 only.
ChannelSamples run_encoders(const MiracleModel& model, const MatrixXr& x_c, const MatrixXr& x_r, std::uint64_t seed) {
  const auto& scales = model.scales();
  const int S = model.config.mc_samples;
  ChannelSamples out;
  const auto spec_c = model.config.clinical_spec();
  Rng rng_c(mix_seed(seed, 1));
  for (int s = 0; s < S; ++s)
    out.clinical.push_back(vb::mlp_forward(spec_c, model.clinical, scales.clinical, x_c, rng_c, false).y);
  if (!model.radiomic.empty()) {
    const auto spec_r = model.config.radiomic_spec();
    Rng rng_r(mix_seed(seed, 2));
    for (int s = 0; s < S; ++s)
      out.radiomic.push_back(vb::mlp_forward(spec_r, model.radiomic, scales.radiomic, x_r, rng_r, false).y);
  }
  return out;
}

// [S x n] per-sample probabilities.
MatrixXr run_classifier(const MiracleModel& model, const ChannelSamples& channels, const MatrixXr& e_m,
                        std::uint64_t seed) {
  const auto& scales = model.scales();
  const int S = model.config.mc_samples;
  const auto spec_k = model.config.classifier_spec();
  const Index n = channels.clinical.front().cols();
  MatrixXr probs(S, n);
  Rng rng_k(mix_seed(seed, 3));
  static const MatrixXr kNone;
  for (int s = 0; s < S; ++s) {
    const MatrixXr z = detail::fuse_sample(model.config, channels.clinical[s],
                                           channels.radiomic.empty() ? kNone : channels.radiomic[s], e_m);
    const MatrixXr logits = vb::mlp_forward(spec_k, model.classifier, scales.classifier, z, rng_k, false).y;
    probs.row(s) = vb::sigmoid(logits.array()).matrix();
  }
  return probs;
}

void summarise(PredictionResult& r, const MatrixXr& probs) {
  r.sample_probabilities = probs.col(0);
  r.probability = r.sample_probabilities.mean();
  const double var = (r.sample_probabilities.array() - r.probability).square().mean();
  r.mc_std = std::sqrt(var);
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

}  // namespace

PredictionResult predict(const MiracleModel& model, const data::PatientRecord& record, const remarks::Remark& remark,
                         std::optional<std::uint64_t> seed) {
  PredictionResult r;
  r.patient_id = record.patient_id;
  r.remark = remark;
  r.seed = seed.value_or(default_seed(record.patient_id));
  auto encoded = data::encode(record, model.codec);
  r.warnings = std::move(encoded.warnings);

  const auto channels = run_encoders(model, MatrixXr(encoded.clinical), MatrixXr(encoded.radiomic), r.seed);
  const int S = model.config.mc_samples;
  r.E_c.resize(remarks::kEmbeddingDim, S);
  for (int s = 0; s < S; ++s) r.E_c.col(s) = channels.clinical[s].col(0);
  if (!channels.radiomic.empty()) {
    r.E_r.resize(remarks::kEmbeddingDim, S);
    for (int s = 0; s < S; ++s) r.E_r.col(s) = channels.radiomic[s].col(0);
  }
  if (uses_remark(model.config.ablation)) {
    auto e = model.remark_encoder->encode(remark.text);
    r.E_m = std::move(e.vector);
    for (auto& w : e.warnings) r.warnings.push_back(std::move(w));
  }
  summarise(r, run_classifier(model, channels, MatrixXr(r.E_m), r.seed));
  return r;
}

PredictionResult intervene(const MiracleModel& model, const PredictionResult& prior, const std::string& edited_text) {
  if (!uses_remark(model.config.ablation))
    throw UnsupportedOperation("model runs in " + to_string(model.config.ablation) +
                               " mode, which has no remark channel to edit");
  if (blank(edited_text)) throw InputError("edited remark is empty");
  const int S = model.config.mc_samples;
  if (prior.E_c.rows() != remarks::kEmbeddingDim || prior.E_c.cols() != S ||
      (!model.radiomic.empty() && (prior.E_r.rows() != remarks::kEmbeddingDim || prior.E_r.cols() != S)))
    throw InputError("prior prediction does not carry embeddings for this model");

  PredictionResult r;
  r.patient_id = prior.patient_id;
  r.seed = prior.seed;
  r.E_c = prior.E_c;
  r.E_r = prior.E_r;
  r.remark = {edited_text, remarks::RemarkOrigin::clinician_edited, "clinician"};
  auto e = model.remark_encoder->encode(edited_text);
  r.E_m = std::move(e.vector);
  r.warnings = std::move(e.warnings);

  ChannelSamples channels;
  for (int s = 0; s < S; ++s) {
    channels.clinical.emplace_back(r.E_c.col(s));
    if (r.E_r.size() > 0) channels.radiomic.emplace_back(r.E_r.col(s));
  }
  summarise(r, run_classifier(model, channels, MatrixXr(r.E_m), r.seed));
  return r;
}

MatrixXr embed_remarks(const MiracleModel& model, std::span<const remarks::Remark> remarks) {
  if (!uses_remark(model.config.ablation)) return {};
  MatrixXr out(remarks::kEmbeddingDim, static_cast<Index>(remarks.size()));
  for (std::size_t i = 0; i < remarks.size(); ++i)
    out.col(static_cast<Index>(i)) = model.remark_encoder->encode(remarks[i].text).vector;
  return out;
}

namespace {

void check_remarks(const MiracleModel& model, std::size_t n, const MatrixXr& e_m) {
  if (uses_remark(model.config.ablation) &&
      (e_m.rows() != remarks::kEmbeddingDim || e_m.cols() != static_cast<Index>(n)))
    throw ShapeError("remark embeddings must be [768 x " + std::to_string(n) + "]");
}

}  // namespace

std::vector<double> score_batch(const MiracleModel& model, std::span<const data::PatientRecord> records,
                                const MatrixXr& remark_embeddings, std::uint64_t seed) {
  if (records.empty()) return {};
  check_remarks(model, records.size(), remark_embeddings);
  const auto x = data::encode_batch(records, model.codec);
  const auto channels = run_encoders(model, x.clinical, x.radiomic, seed);
  const MatrixXr e_m = uses_remark(model.config.ablation) ? remark_embeddings : MatrixXr();
  const VectorXr mean = run_classifier(model, channels, e_m, seed).colwise().mean().transpose();
  return {mean.data(), mean.data() + mean.size()};
}

std::vector<double> score_each(const MiracleModel& model, std::span<const data::PatientRecord> records,
                               const MatrixXr& remark_embeddings) {
  check_remarks(model, records.size(), remark_embeddings);
  const bool remark = uses_remark(model.config.ablation);
  std::vector<double> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto enc = data::encode(records[i], model.codec);
    const std::uint64_t seed = default_seed(records[i].patient_id);
    const auto channels = run_encoders(model, MatrixXr(enc.clinical), MatrixXr(enc.radiomic), seed);
    const MatrixXr e_m = remark ? MatrixXr(remark_embeddings.col(static_cast<Index>(i))) : MatrixXr();
    const VectorXr probs = run_classifier(model, channels, e_m, seed).col(0);
    out.push_back(probs.mean());
  }
  return out;
}

namespace {

struct Fnv {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ULL;
    }
  }
  template <typename Derived>
  void block(const Eigen::PlainObjectBase<Derived>& m) {
    bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(typename Derived::Scalar));
  }
};

}  // namespace

std::string parameter_checksum(const MiracleModel& model) {
  Fnv f;
  for (const auto* net : {&model.clinical, &model.radiomic, &model.classifier}) {
    for (const auto& layer : *net) {
      f.block(layer.mu_w);
      f.block(layer.rho_w);
      f.block(layer.mu_b);
      f.block(layer.rho_b);
    }
  }
  return hex64(f.h);
}

nlohmann::json model_info(const MiracleModel& model) {
  const auto w = model.config.effective_fusion();
  nlohmann::json info = {
      {"embedding_dim", remarks::kEmbeddingDim},
      {"mc_samples", model.config.mc_samples},
      {"ablation", to_string(model.config.ablation)},
      {"fusion", {{"w_c", w.w_c}, {"w_r", w.w_r}, {"w_m", w.w_m}}},
      {"normalize_embeddings", model.config.normalize_embeddings},
      {"parameter_count", model.parameter_count()},
      {"parameter_checksum", parameter_checksum(model)},
      {"best_epoch", model.history.best_epoch},
      {"best_val_auc", model.history.best_val_auc},
      {"epochs_trained", model.history.epochs.size()},
      {"clinical_fields", nlohmann::json::array()},
      {"config", model.config.to_json()},
  };
  for (const auto& f : model.codec.schema.fields) info["clinical_fields"].push_back(f.name);
  if (model.remark_encoder) {
    info["embedder"] = model.remark_encoder->embedder().name();
    info["projection_checksum"] = model.remark_encoder->projection().checksum();
  } else {
    info["embedder"] = nullptr;
    info["projection_checksum"] = nullptr;
  }
  return info;
}

namespace {

nlohmann::json vector_json(const VectorXr& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

nlohmann::json PredictionResult::to_json(bool include_embeddings) const {
  auto channel = [](const char* name, bool active, const MatrixXr& e) {
    nlohmann::json c = {{"channel", name}, {"active", active}};
    if (active) {
      c["mean_norm"] = e.rowwise().mean().norm();
      c["dim"] = e.rows();
    }
    return c;
  };
  nlohmann::json j = {
      {"patient_id", patient_id},
      {"probability", probability},
      {"mc_std", mc_std},
      {"sample_probabilities", vector_json(sample_probabilities)},
      {"remark",
       {{"text", remark.text}, {"origin", remarks::to_string(remark.origin)}, {"model_name", remark.model_name}}},
      {"seed", hex64(seed)},
      {"warnings", warnings},
      {"channel_summary",
       {channel("clinical", E_c.size() > 0, E_c), channel("radiomic", E_r.size() > 0, E_r),
        channel("remark", E_m.size() > 0, MatrixXr(E_m))}},
  };
  if (include_embeddings) {
    j["embeddings"] = {{"clinical", vector_json(E_c.rowwise().mean())}};
    if (E_r.size() > 0) j["embeddings"]["radiomic"] = vector_json(E_r.rowwise().mean());
    if (E_m.size() > 0) j["embeddings"]["remark"] = vector_json(E_m);
  }
  return j;
}

}  // namespace miracle::model
