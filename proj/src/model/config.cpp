#include "miracle/model/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <set>

namespace miracle::model {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::clinical_only:
      return "clinical_only";
    case Ablation::clinical_radiomic:
      return "clinical_radiomic";
    case Ablation::full:
      return "full";
  }
  return "full";
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "clinical_only") return Ablation::clinical_only;
  if (s == "clinical_radiomic") return Ablation::clinical_radiomic;
  if (s == "full") return Ablation::full;
  throw ConfigError("unknown ablation mode '" + s + "' (expected clinical_only, clinical_radiomic or full)");
}

void FusionWeights::validate() const {
  for (double w : {w_c, w_r, w_m})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("fusion weights must be finite and nonnegative");
  if (!(w_c + w_r + w_m > 0.0)) throw ConfigError("fusion weights must not all be zero");
}

FusionWeights FusionWeights::normalized() const {
  validate();
  const double total = w_c + w_r + w_m;
  return {w_c / total, w_r / total, w_m / total};
}

FusionWeights FusionWeights::for_ablation(Ablation a) const {
  FusionWeights w = *this;
  if (!uses_radiomic(a)) w.w_r = 0;
  if (!uses_remark(a)) w.w_m = 0;
  if (!(w.w_c + w.w_r + w.w_m > 0.0))
    throw ConfigError("fusion weights leave no active channel under ablation " + to_string(a));
  return w.normalized();
}

std::shared_ptr<const remarks::RemarkEncoder> make_remark_encoder(const EmbedderConfig& config) {
  std::shared_ptr<const remarks::RemarkEmbedder> embedder;
  if (config.kind == "hashing") {
    embedder = std::make_shared<remarks::HashingEmbedder>(config.hash_seed);
  } else if (config.kind == "external") {
    const char* key = std::getenv("MIRACLE_EMBED_API_KEY");
    embedder = std::make_shared<remarks::ExternalEmbedder>(config.url, config.model, key ? key : "");
  } else {
    throw ConfigError("unknown embedder kind '" + config.kind + "'");
  }
  std::shared_ptr<const remarks::FrozenProjection> projection;
  if (config.projection_seed != remarks::FrozenProjection::kDefaultSeed)
    projection = std::make_shared<remarks::FrozenProjection>(config.projection_seed);
  return std::make_shared<remarks::RemarkEncoder>(std::move(embedder), std::move(projection));
}

namespace {

vb::MlpSpec spec_for(const MiracleConfig& c, const std::vector<Index>& dims) {
  vb::MlpSpec s;
  s.layer_dims = dims;
  s.dropout_rate = c.dropout;
  s.mc_samples = c.mc_samples;
  s.kl_weight = c.kl_weight;
  return s;
}

}  // namespace

vb::MlpSpec MiracleConfig::clinical_spec() const { return spec_for(*this, clinical_layers); }
vb::MlpSpec MiracleConfig::radiomic_spec() const { return spec_for(*this, radiomic_layers); }
vb::MlpSpec MiracleConfig::classifier_spec() const { return spec_for(*this, classifier_layers); }

void MiracleConfig::validate() const {
  clinical_spec().validate();
  radiomic_spec().validate();
  classifier_spec().validate();
  if (clinical_layers.back() != remarks::kEmbeddingDim || radiomic_layers.back() != remarks::kEmbeddingDim)
    throw ConfigError("clinical and radiomic encoders must end at the embedding width " +
                      std::to_string(remarks::kEmbeddingDim));
  if (classifier_layers.back() != 1) throw ConfigError("classifier must end in a single logit");
  fusion.validate();
  effective_fusion();
  focal.validate();
  if (!std::isfinite(rho_init)) throw ConfigError("rho_init must be finite");
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0,1)");
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (patience < 1) throw ConfigError("patience must be positive");
  if (embedder.kind != "hashing" && embedder.kind != "external")
    throw ConfigError("unknown embedder kind '" + embedder.kind + "'");
  if (embedder.kind == "external" && embedder.url.empty()) throw ConfigError("external embedder needs a url");
}

nlohmann::json MiracleConfig::to_json() const {
  return {
      {"clinical_layers", clinical_layers},
      {"radiomic_layers", radiomic_layers},
      {"classifier_layers", classifier_layers},
      {"dropout", dropout},
      {"mc_samples", mc_samples},
      {"kl_weight", kl_weight},
      {"rho_init", rho_init},
      {"fusion", {{"w_c", fusion.w_c}, {"w_r", fusion.w_r}, {"w_m", fusion.w_m}}},
      {"normalize_embeddings", normalize_embeddings},
      {"focal", {{"alpha", focal.alpha}, {"gamma", focal.gamma}}},
      {"ablation", to_string(ablation)},
      {"optimizer",
       {{"learning_rate", optimizer.learning_rate},
        {"beta1", optimizer.beta1},
        {"beta2", optimizer.beta2},
        {"epsilon", optimizer.epsilon}}},
      {"batch_size", batch_size},
      {"max_epochs", max_epochs},
      {"patience", patience},
      {"seed", seed},
      {"embedder",
       {{"kind", embedder.kind},
        {"hash_seed", embedder.hash_seed},
        {"url", embedder.url},
        {"model", embedder.model},
        {"projection_seed", embedder.projection_seed}}},
  };
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

MiracleConfig MiracleConfig::from_json(const nlohmann::json& j) {
  MiracleConfig c;
  try {
    reject_unknown(j,
                   {"clinical_layers", "radiomic_layers", "classifier_layers", "dropout", "mc_samples", "kl_weight",
                    "rho_init", "fusion", "normalize_embeddings", "focal", "ablation", "optimizer", "batch_size",
                    "max_epochs", "patience", "seed", "embedder"},
                   "");
    read(j, "clinical_layers", c.clinical_layers);
    read(j, "radiomic_layers", c.radiomic_layers);
    read(j, "classifier_layers", c.classifier_layers);
    read(j, "dropout", c.dropout);
    read(j, "mc_samples", c.mc_samples);
    read(j, "kl_weight", c.kl_weight);
    read(j, "rho_init", c.rho_init);
    if (j.contains("fusion")) {
      const auto& f = j.at("fusion");
      reject_unknown(f, {"w_c", "w_r", "w_m"}, "fusion.");
      read(f, "w_c", c.fusion.w_c);
      read(f, "w_r", c.fusion.w_r);
      read(f, "w_m", c.fusion.w_m);
    }
    read(j, "normalize_embeddings", c.normalize_embeddings);
    if (j.contains("focal")) {
      const auto& f = j.at("focal");
      reject_unknown(f, {"alpha", "gamma"}, "focal.");
      read(f, "alpha", c.focal.alpha);
      read(f, "gamma", c.focal.gamma);
    }
    if (j.contains("ablation")) c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown(o, {"learning_rate", "beta1", "beta2", "epsilon"}, "optimizer.");
      read(o, "learning_rate", c.optimizer.learning_rate);
      read(o, "beta1", c.optimizer.beta1);
      read(o, "beta2", c.optimizer.beta2);
      read(o, "epsilon", c.optimizer.epsilon);
    }
    read(j, "batch_size", c.batch_size);
    read(j, "max_epochs", c.max_epochs);
    read(j, "patience", c.patience);
    read(j, "seed", c.seed);
    if (j.contains("embedder")) {
      const auto& e = j.at("embedder");
      reject_unknown(e, {"kind", "hash_seed", "url", "model", "projection_seed"}, "embedder.");
      read(e, "kind", c.embedder.kind);
      read(e, "hash_seed", c.embedder.hash_seed);
      read(e, "url", c.embedder.url);
      read(e, "model", c.embedder.model);
      read(e, "projection_seed", c.embedder.projection_seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json parse_config_document(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return nlohmann::json::object();
  if (text[first] == '{') {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    return j;
  }
  nlohmann::json out = nlohmann::json::object();
  std::istringstream in(text);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto l = s.find_first_not_of(" \t\r");
      const auto r = s.find_last_not_of(" \t\r");
      return l == std::string::npos ? std::string() : s.substr(l, r - l + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    auto value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    nlohmann::json::json_pointer ptr;
    std::istringstream parts(key);
    for (std::string part; std::getline(parts, part, '.');) {
      if (part.empty()) throw ConfigError("config line " + std::to_string(n) + ": malformed key " + key);
      ptr /= part;
    }
    if (out.contains(ptr)) throw ConfigError("config line " + std::to_string(n) + ": duplicate key " + key);
    out[ptr] = value;
  }
  return out;
}

nlohmann::json read_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_document(text.str());
}

}  // namespace miracle::model
