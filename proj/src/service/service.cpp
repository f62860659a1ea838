#include "miracle/service/service.hpp"

#include <algorithm>
#include <charconv>
#include <ctime>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <openssl/rand.h>

namespace miracle::service {

namespace {

using nlohmann::json;

json error_body(const std::string& code, const std::string& message) {
  return {{"error", code}, {"message", message}};
}

std::string hex(const unsigned char* bytes, std::size_t n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = digits[bytes[i] >> 4];
    out[2 * i + 1] = digits[bytes[i] & 0xf];
  }
  return out;
}

std::string new_token() {
  unsigned char bytes[16];
  if (RAND_bytes(bytes, sizeof bytes) != 1) throw Error("could not draw a session token");
  return hex(bytes, sizeof bytes);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return os.str();
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::optional<std::size_t> parse_count(const std::string& text) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) return std::nullopt;
  return v;
}

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  return hex(digest, len);
}

InferenceService::InferenceService(ServiceConfig config, remarks::RemarkGenerator generator)
    : config_(std::move(config)), generator_(std::move(generator)) {
  if (config_.session_ttl.count() <= 0) throw ConfigError("session_ttl must be positive");
  if (config_.default_page_size == 0 || config_.default_page_size > config_.max_page_size)
    throw ConfigError("default_page_size must be in [1, max_page_size]");
  if (!config_.audit_log.empty()) {
    audit_file_.open(config_.audit_log, std::ios::app);
    if (!audit_file_) throw ConfigError("cannot open audit log " + config_.audit_log.string());
  }
  routes();
}

InferenceService::~InferenceService() { stop(); }

void InferenceService::load_model(std::shared_ptr<const model::MiracleModel> model, std::string source) {
  if (!model) throw InputError("load_model: null model");
  std::lock_guard lock(model_mutex_);
  model_ = std::move(model);
  model_source_ = std::move(source);
}

void InferenceService::load_patients(std::vector<data::PatientRecord> patients) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < patients.size(); ++i)
    if (!index.emplace(patients[i].patient_id, i).second)
      throw InputError("duplicate demo patient id " + patients[i].patient_id);
  std::lock_guard lock(patients_mutex_);
  patients_ = std::move(patients);
  patient_index_ = std::move(index);
}

std::shared_ptr<const model::MiracleModel> InferenceService::model() const {
  std::lock_guard lock(model_mutex_);
  return model_;
}

std::size_t InferenceService::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

std::size_t InferenceService::audit_entries() const {
  std::lock_guard lock(audit_mutex_);
  return audit_entries_;
}

int InferenceService::bind() {
  if (bound_port_ >= 0) return bound_port_;
  if (config_.port == 0) {
    bound_port_ = server_.bind_to_any_port(config_.host);
  } else if (server_.bind_to_port(config_.host, config_.port)) {
    bound_port_ = config_.port;
  }
  if (bound_port_ < 0) throw ConfigError("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  return bound_port_;
}

void InferenceService::listen() {
  bind();
  server_.listen_after_bind();
}

void InferenceService::stop() { server_.stop(); }

void InferenceService::wait_until_ready() const { server_.wait_until_ready(); }

void InferenceService::routes() {
  auto wrap = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      const Reply r = handler(req);
      send(res, r.status, r.body);
    };
  };
  server_.Post("/predict", wrap([this](const httplib::Request& req) { return handle_predict(req.body); }));
  server_.Post("/intervene", wrap([this](const httplib::Request& req) { return handle_intervene(req.body); }));
  server_.Get("/patients", wrap([this](const httplib::Request& req) { return handle_patients(req); }));
  server_.Get(R"(/patients/([^/]+))",
              wrap([this](const httplib::Request& req) { return handle_patient(req.matches[1].str()); }));
  server_.Get("/model/info", wrap([this](const httplib::Request&) { return handle_info(); }));
  server_.Get("/healthz", wrap([this](const httplib::Request&) { return handle_health(); }));
  server_.Get("/openapi", wrap([](const httplib::Request&) { return Reply{200, openapi()}; }));

  server_.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
    res.set_content(error_body(code, req.method + " " + req.path).dump(), "application/json");
  });
  server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send(res, 500, error_body("internal", message));
  });
}

InferenceService::Reply InferenceService::handle_predict(const std::string& body) {
  const auto model = this->model();
  if (!model) return {503, error_body("model_not_loaded", "no model is loaded")};
  const json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return {400, error_body("bad_request", "body must be a JSON object")};

  data::PatientRecord record;
  if (req.contains("clinical") || req.contains("radiomics")) {
    try {
      record = data::patient_from_json(req, model->codec.schema);
    } catch (const data::FieldErrors& e) {
      json b = error_body("schema_violation", e.what());
      b["fields"] = e.fields;
      return {422, b};
    } catch (const SchemaError& e) {
      json b = error_body("schema_violation", e.what());
      b["fields"] = json::array();
      return {422, b};
    }
  } else if (req.contains("patient_id") && req["patient_id"].is_string()) {
    const std::string id = req["patient_id"];
    std::lock_guard lock(patients_mutex_);
    const auto it = patient_index_.find(id);
    if (it == patient_index_.end()) return {404, error_body("unknown_patient", "no demo patient " + id)};
    record = patients_[it->second];
  } else {
    return {400, error_body("bad_request", "expected a patient payload or a patient_id")};
  }
  const auto violations = data::schema_violations(record, model->codec.schema);
  if (!violations.empty()) {
    json b = error_body("schema_violation", "patient does not match the model schema");
    b["fields"] = violations;
    return {422, b};
  }

  std::vector<std::string> warnings;
  remarks::Remark remark;
  try {
    remark = generator_.generate(record.clinical);
  } catch (const RemoteError& e) {
    if (!config_.stub_fallback) return {502, error_body("llm_unavailable", e.what())};
    remark = generator_.generate_stub(record.clinical);
    warnings.push_back(std::string("remark generator failed, stub remark used: ") + e.what());
  } catch (const GenerationError& e) {
    if (!config_.stub_fallback) return {502, error_body("llm_unavailable", e.what())};
    remark = generator_.generate_stub(record.clinical);
    warnings.push_back(std::string("remark generator failed, stub remark used: ") + e.what());
  }

  model::PredictionResult result = model::predict(*model, record, remark, model::request_seed(record.patient_id, config_.seed));
  result.warnings.insert(result.warnings.end(), warnings.begin(), warnings.end());
  json out = result.to_json();
  out["remark_text"] = result.remark.text;
  out["session_token"] = open_session(model, std::move(result));
  return {200, out};
}

InferenceService::Reply InferenceService::handle_intervene(const std::string& body) {
  const json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return {400, error_body("bad_request", "body must be a JSON object")};
  if (!req.contains("session_token") || !req["session_token"].is_string())
    return {400, error_body("bad_request", "session_token must be a string")};
  if (!req.contains("edited_remark") || !req["edited_remark"].is_string())
    return {400, error_body("bad_request", "edited_remark must be a string")};
  const std::string token = req["session_token"];
  const std::string edited = req["edited_remark"];

  Reply error;
  const auto session = find_session(token, error);
  if (!session) return error;
  std::lock_guard lock(session->mutex);
  const auto now = config_.clock();
  if (now - session->last_used > config_.session_ttl) return {410, error_body("session_expired", "session expired")};
  if (!model::uses_remark(session->model->config.ablation))
    return {409, error_body("no_remark_channel", "model runs in " + model::to_string(session->model->config.ablation) +
                                                     " mode without a remark channel")};
  if (blank(edited)) return {400, error_body("empty_edit", "edited remark is empty")};

  model::PredictionResult next = model::intervene(*session->model, session->result, edited);
  const double previous = session->result.probability;
  audit(token, session->result.remark.text, edited, previous, next.probability);

  json out{{"session_token", token},
           {"probability", next.probability},
           {"mc_std", next.mc_std},
           {"previous_probability", previous},
           {"delta_vs_previous", next.probability - previous},
           {"remark_text", next.remark.text},
           {"remark_origin", remarks::to_string(next.remark.origin)}};
  session->result = std::move(next);
  session->last_used = now;
  return {200, out};
}

InferenceService::Reply InferenceService::handle_patients(const httplib::Request& req) const {
  std::size_t page = 1, per_page = config_.default_page_size;
  if (req.has_param("page")) {
    const auto v = parse_count(req.get_param_value("page"));
    if (!v || *v < 1) return {400, error_body("bad_request", "page must be a positive integer")};
    page = *v;
  }
  if (req.has_param("per_page")) {
    const auto v = parse_count(req.get_param_value("per_page"));
    if (!v || *v < 1 || *v > config_.max_page_size)
      return {400, error_body("bad_request", "per_page must be in [1, " + std::to_string(config_.max_page_size) + "]")};
    per_page = *v;
  }
  std::lock_guard lock(patients_mutex_);
  json items = json::array();
  const std::size_t total = patients_.size();
  if ((page - 1) < (total + per_page - 1) / per_page) {
    const std::size_t begin = (page - 1) * per_page;
    for (std::size_t i = begin; i < std::min(total, begin + per_page); ++i) {
      const auto& p = patients_[i];
      items.push_back({{"patient_id", p.patient_id}, {"label", p.label}});
    }
  }
  return {200, {{"page", page}, {"per_page", per_page}, {"total", total}, {"patients", items}}};
}

InferenceService::Reply InferenceService::handle_patient(const std::string& id) const {
  std::lock_guard lock(patients_mutex_);
  const auto it = patient_index_.find(id);
  if (it == patient_index_.end()) return {404, error_body("unknown_patient", "no demo patient " + id)};
  return {200, data::patient_to_json(patients_[it->second])};
}

InferenceService::Reply InferenceService::handle_info() const {
  std::shared_ptr<const model::MiracleModel> model;
  std::string source;
  {
    std::lock_guard lock(model_mutex_);
    model = model_;
    source = model_source_;
  }
  if (!model) return {503, error_body("model_not_loaded", "no model is loaded")};
  json info = model::model_info(*model);
  info["checkpoint"] = source;
  info["remark_generator"] = generator_.stub() ? std::string(remarks::kStubModelName) : generator_.config().model;
  return {200, info};
}

InferenceService::Reply InferenceService::handle_health() const {
  const bool loaded = model() != nullptr;
  std::size_t n;
  {
    std::lock_guard lock(patients_mutex_);
    n = patients_.size();
  }
  return {loaded ? 200 : 503, {{"status", loaded ? "ok" : "model_not_loaded"}, {"patients", n}}};
}

std::string InferenceService::open_session(std::shared_ptr<const model::MiracleModel> model,
                                           model::PredictionResult result) {
  auto session = std::make_shared<Session>();
  session->model = std::move(model);
  session->result = std::move(result);
  const auto now = config_.clock();
  session->last_used = now;
  const std::string token = new_token();
  std::lock_guard lock(sessions_mutex_);
  sweep(now);
  if (sessions_.size() >= config_.max_sessions) {
    auto oldest = std::min_element(sessions_.begin(), sessions_.end(), [](const auto& a, const auto& b) {
      return a.second->last_used < b.second->last_used;
    });
    sessions_.erase(oldest);
  }
  sessions_.emplace(token, std::move(session));
  return token;
}

std::shared_ptr<Session> InferenceService::find_session(const std::string& token, Reply& error) {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(token);
  if (it == sessions_.end()) {
    error = {410, error_body("session_expired", "no live session for this token")};
    return nullptr;
  }
  return it->second;
}

// Caller holds sessions_mutex_. A session whose own mutex is held is being
// served and is left for the next sweep.
void InferenceService::sweep(Clock::time_point now) {
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock session_lock(it->second->mutex, std::try_to_lock);
    if (session_lock.owns_lock() && now - it->second->last_used > config_.session_ttl) {
      session_lock.unlock();
      it = sessions_.erase(it);
    } else {
      ++it;
    }
  }
}

void InferenceService::audit(const std::string& token, const std::string& old_text, const std::string& new_text,
                             double old_p, double new_p) {
  const json entry{{"timestamp", utc_timestamp()},
                   {"session_token", token},
                   {"old_remark_sha256", sha256_hex(old_text)},
                   {"new_remark_sha256", sha256_hex(new_text)},
                   {"old_probability", old_p},
                   {"new_probability", new_p}};
  std::lock_guard lock(audit_mutex_);
  if (audit_file_.is_open()) {
    audit_file_ << entry.dump() << '\n';
    audit_file_.flush();
  }
  ++audit_entries_;
}

nlohmann::json InferenceService::openapi() {
  const json error_ref{{"$ref", "#/components/schemas/Error"}};
  auto response = [](const std::string& description, const json& schema) {
    return json{{"description", description}, {"content", {{"application/json", {{"schema", schema}}}}}};
  };
  const json err = response("error", error_ref);
  const json number{{"type", "number"}};
  const json string{{"type", "string"}};
  json doc;
  doc["openapi"] = "3.0.3";
  doc["info"] = {{"title", "miracle inference service"}, {"version", "1"}};
  doc["components"]["schemas"] = {
      {"Error",
       {{"type", "object"},
        {"required", {"error", "message"}},
        {"properties", {{"error", string}, {"message", string}, {"fields", {{"type", "array"}, {"items", string}}}}}}},
      {"PatientPayload",
       {{"type", "object"},
        {"properties",
         {{"patient_id", string},
          {"clinical", {{"type", "object"}}},
          {"radiomics", {{"type", "array"}, {"items", number}}},
          {"label", {{"type", "integer"}}}}}}},
      {"PredictResponse",
       {{"type", "object"},
        {"required", {"session_token", "patient_id", "probability", "mc_std", "remark_text", "channel_summary"}},
        {"properties",
         {{"session_token", string},
          {"patient_id", string},
          {"probability", number},
          {"mc_std", number},
          {"sample_probabilities", {{"type", "array"}, {"items", number}}},
          {"remark_text", string},
          {"remark", {{"type", "object"}}},
          {"seed", string},
          {"warnings", {{"type", "array"}, {"items", string}}},
          {"channel_summary", {{"type", "array"}, {"items", {{"type", "object"}}}}}}}}},
      {"InterveneRequest",
       {{"type", "object"},
        {"required", {"session_token", "edited_remark"}},
        {"properties", {{"session_token", string}, {"edited_remark", string}}}}},
      {"InterveneResponse",
       {{"type", "object"},
        {"required", {"probability", "mc_std", "delta_vs_previous"}},
        {"properties",
         {{"session_token", string},
          {"probability", number},
          {"mc_std", number},
          {"previous_probability", number},
          {"delta_vs_previous", number},
          {"remark_text", string},
          {"remark_origin", string}}}}}};

  auto& paths = doc["paths"];
  paths["/predict"]["post"] = {
      {"summary", "Generate a remark and predict complication risk"},
      {"requestBody", {{"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/PatientPayload"}}}}}}}}},
      {"responses",
       {{"200", response("prediction", {{"$ref", "#/components/schemas/PredictResponse"}})},
        {"400", err},
        {"404", err},
        {"422", err},
        {"502", err},
        {"503", err}}}};
  paths["/intervene"]["post"] = {
      {"summary", "Re-score a session with an edited remark"},
      {"requestBody",
       {{"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/InterveneRequest"}}}}}}}}},
      {"responses",
       {{"200", response("updated prediction", {{"$ref", "#/components/schemas/InterveneResponse"}})},
        {"400", err},
        {"409", err},
        {"410", err}}}};
  paths["/patients"]["get"] = {
      {"summary", "Paginated demo patient listing"},
      {"parameters",
       {{{"name", "page"}, {"in", "query"}, {"schema", {{"type", "integer"}, {"minimum", 1}}}},
        {{"name", "per_page"}, {"in", "query"}, {"schema", {{"type", "integer"}, {"minimum", 1}}}}}},
      {"responses", {{"200", response("page of patients", {{"type", "object"}})}, {"400", err}}}};
  paths["/patients/{id}"]["get"] = {
      {"summary", "Full demo patient record"},
      {"parameters", {{{"name", "id"}, {"in", "path"}, {"required", true}, {"schema", string}}}},
      {"responses",
       {{"200", response("patient", {{"$ref", "#/components/schemas/PatientPayload"}})}, {"404", err}}}};
  paths["/model/info"]["get"] = {
      {"summary", "Configuration, checkpoint metadata and embedder"},
      {"responses", {{"200", response("model metadata", {{"type", "object"}})}, {"503", err}}}};
  paths["/healthz"]["get"] = {
      {"summary", "Liveness"},
      {"responses", {{"200", response("model loaded", {{"type", "object"}})}, {"503", err}}}};
  paths["/openapi"]["get"] = {{"summary", "This document"},
                              {"responses", {{"200", response("OpenAPI document", {{"type", "object"}})}}}};
  return doc;
}

}  // namespace miracle::service
