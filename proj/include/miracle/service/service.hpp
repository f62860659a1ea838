#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

// Before httplib: <resolv.h> defines a _res macro that breaks Eigen's headers.
#include "miracle/model/model.hpp"
#include "miracle/remarks/completion.hpp"

#include <httplib.h>

namespace miracle::service {

using Clock = std::chrono::steady_clock;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::chrono::seconds session_ttl{1800};
  std::size_t max_sessions = 10000;
  std::filesystem::path audit_log;  // JSON lines; empty disables the file
  bool stub_fallback = false;       // use the stub remark instead of answering 502
  std::optional<std::uint64_t> seed;  // salts the per-patient seed
  std::size_t default_page_size = 20;
  std::size_t max_page_size = 200;
  std::function<Clock::time_point()> clock = [] { return Clock::now(); };
};

/// Latest prediction for one token. Intervention reuses its embeddings.
struct Session {
  std::mutex mutex;  // serializes requests on the same token
  std::shared_ptr<const model::MiracleModel> model;
  model::PredictionResult result;
  Clock::time_point last_used;
};

/// HTTP front end over an immutable model. The model and demo patients may
/// be loaded after construction; until a model is loaded every model route
/// answers 503.
class InferenceService {
 public:
  InferenceService(ServiceConfig config, remarks::RemarkGenerator generator);
  ~InferenceService();

  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  void load_model(std::shared_ptr<const model::MiracleModel> model, std::string source = {});
  void load_patients(std::vector<data::PatientRecord> patients);

  /// Binds the listening socket and returns the port.
  int bind();
  /// Serves until stop(). Calls bind() first if needed.
  void listen();
  void stop();
  void wait_until_ready() const;

  std::shared_ptr<const model::MiracleModel> model() const;
  std::size_t session_count() const;
  std::size_t audit_entries() const;

  /// OpenAPI 3 description of every route.
  static nlohmann::json openapi();

 private:
  struct Reply {
    int status = 200;
    nlohmann::json body;
  };

  void routes();
  Reply handle_predict(const std::string& body);
  Reply handle_intervene(const std::string& body);
  Reply handle_patients(const httplib::Request& req) const;
  Reply handle_patient(const std::string& id) const;
  Reply handle_info() const;
  Reply handle_health() const;

  std::string open_session(std::shared_ptr<const model::MiracleModel> model, model::PredictionResult result);
  /// Live session for `token`, or the error reply.
  std::shared_ptr<Session> find_session(const std::string& token, Reply& error);
  void sweep(Clock::time_point now);
  void audit(const std::string& token, const std::string& old_text, const std::string& new_text, double old_p,
             double new_p);

  ServiceConfig config_;
  remarks::RemarkGenerator generator_;
  httplib::Server server_;
  int bound_port_ = -1;

  mutable std::mutex model_mutex_;
  std::shared_ptr<const model::MiracleModel> model_;
  std::string model_source_;

  std::vector<data::PatientRecord> patients_;
  std::unordered_map<std::string, std::size_t> patient_index_;
  mutable std::mutex patients_mutex_;

  mutable std::mutex sessions_mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;

  mutable std::mutex audit_mutex_;
  std::ofstream audit_file_;
  std::size_t audit_entries_ = 0;
};

/// SHA-256 of `text` as lowercase hex.
std::string sha256_hex(const std::string& text);

}  // namespace miracle::service
