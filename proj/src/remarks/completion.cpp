#include "miracle/remarks/completion.hpp"

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "miracle/remarks/summary.hpp"

namespace miracle::remarks {

std::string to_string(RemarkOrigin origin) {
  switch (origin) {
    case RemarkOrigin::llm_generated:
      return "llm_generated";
    case RemarkOrigin::clinician_edited:
      return "clinician_edited";
    case RemarkOrigin::stub:
      return "stub";
  }
  return "stub";
}

RemarkOrigin remark_origin_from_string(const std::string& s) {
  if (s == "llm_generated") return RemarkOrigin::llm_generated;
  if (s == "clinician_edited") return RemarkOrigin::clinician_edited;
  if (s == "stub") return RemarkOrigin::stub;
  throw InputError("unknown remark origin '" + s + "'");
}

TextAsset TextAsset::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read text asset " + path.string());
  TextAsset asset{{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path};
  if (asset.text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ConfigError("text asset " + path.string() + " is empty");
  return asset;
}

std::string compose_prompt(const std::string& summary, const std::string& bank, const std::string& prompt) {
  return summary + "\n\n" + bank + "\n\n" + prompt;
}

namespace {

const double* number(const data::ClinicalFields& fields, const char* name) {
  auto it = fields.find(name);
  return it == fields.end() ? nullptr : std::get_if<double>(&it->second);
}

const std::string* text(const data::ClinicalFields& fields, const char* name) {
  auto it = fields.find(name);
  return it == fields.end() ? nullptr : std::get_if<std::string>(&it->second);
}

std::string num(double v) { return data::value_text(v); }

}  // namespace

Remark stub_remark(const data::ClinicalFields& fields) {
  std::string out;
  int major = 0, minor = 0;
  auto say = [&](const std::string& sentence) { out += (out.empty() ? "" : " ") + sentence; };

  if (const double* dlco = number(fields, "dlco_pct")) {
    if (*dlco < 40) {
      say("DLCO of " + num(*dlco) + "% predicted is severely reduced, a major predictor of respiratory failure.");
      major += 2;
    } else if (*dlco < 60) {
      say("DLCO of " + num(*dlco) + "% predicted is moderately reduced and raises pulmonary risk.");
      ++major;
    } else if (*dlco < 80) {
      say("DLCO of " + num(*dlco) + "% predicted is mildly reduced.");
      ++minor;
    } else {
      say("DLCO of " + num(*dlco) + "% predicted is preserved.");
    }
  }
  if (const double* fev1 = number(fields, "fev1_pct")) {
    if (*fev1 < 50) {
      say("FEV1 of " + num(*fev1) + "% predicted indicates severe airflow limitation.");
      major += 2;
    } else if (*fev1 < 65) {
      say("FEV1 of " + num(*fev1) + "% predicted indicates moderate airflow limitation.");
      ++major;
    } else if (*fev1 < 80) {
      say("FEV1 of " + num(*fev1) + "% predicted shows mild obstruction.");
      ++minor;
    } else {
      say("FEV1 of " + num(*fev1) + "% predicted is within normal limits.");
    }
  }
  if (const double* age = number(fields, "age")) {
    if (*age >= 75) {
      say("Advanced age of " + num(*age) + " years increases cardiopulmonary complications.");
      ++major;
    } else if (*age >= 65) {
      say("Age of " + num(*age) + " years adds modest risk.");
      ++minor;
    } else {
      say("Younger age of " + num(*age) + " years is favourable.");
    }
  }
  if (const double* pack = number(fields, "pack_years")) {
    if (*pack >= 40) {
      say("Heavy smoking history of " + num(*pack) + " pack-years impairs airway clearance.");
      ++major;
    } else if (*pack >= 20) {
      say("Moderate smoking history of " + num(*pack) + " pack-years.");
      ++minor;
    } else if (*pack > 0) {
      say("Light smoking history of " + num(*pack) + " pack-years.");
    } else {
      say("No smoking history.");
    }
  }
  if (const double* charlson = number(fields, "charlson_index"); charlson && *charlson >= 4) {
    say("Charlson index of " + num(*charlson) + " reflects substantial comorbidity.");
    ++major;
  }
  if (const double* albumin = number(fields, "albumin"); albumin && *albumin < 3.5) {
    say("Low albumin of " + num(*albumin) + " g/dL suggests poor nutritional reserve.");
    ++minor;
  }
  if (const std::string* procedure = text(fields, "procedure")) {
    if (*procedure == "pneumonectomy") {
      say("Planned pneumonectomy markedly raises morbidity.");
      major += 2;
    } else if (*procedure == "lobectomy") {
      say("Planned lobectomy carries standard resection risk.");
    } else if (*procedure == "segmentectomy" || *procedure == "wedge") {
      say("A limited " + *procedure + " resection lowers the expected burden.");
    } else {
      say("Planned procedure: " + *procedure + ".");
    }
  }
  if (const std::string* approach = text(fields, "surgical_approach")) {
    if (*approach == "open") {
      say("An open thoracotomy adds pain and atelectasis risk.");
      ++minor;
    } else {
      say("A minimally invasive " + *approach + " approach is favourable.");
    }
  }
  const int score = 2 * major + minor;
  if (score >= 6)
    say("Overall risk of postoperative complications appears high.");
  else if (score >= 3)
    say("Overall risk of postoperative complications appears intermediate.");
  else
    say("Overall risk of postoperative complications appears low.");
  return {out, RemarkOrigin::stub, kStubModelName};
}

CompletionConfig CompletionConfig::from_env() {
  CompletionConfig c;
  if (const char* v = std::getenv("MIRACLE_LLM_URL")) c.url = v;
  if (const char* v = std::getenv("MIRACLE_LLM_API_KEY")) c.api_key = v;
  if (const char* v = std::getenv("MIRACLE_LLM_MODEL"); v && *v) c.model = v;
  if (const char* v = std::getenv("MIRACLE_LLM_STUB")) {
    const std::string s = v;
    c.stub = !(s.empty() || s == "0" || s == "false");
  }
  if (c.url.empty()) c.stub = true;
  return c;
}

void CompletionConfig::validate() const {
  if (!stub && url.empty()) throw ConfigError("completion endpoint URL is not configured (MIRACLE_LLM_URL)");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be positive");
  if (max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
  if (max_in_flight < 1) throw ConfigError("max_in_flight must be at least 1");
  if (!(temperature >= 0)) throw ConfigError("temperature must be nonnegative");
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint URL '" + url + "' has no scheme");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

CompletionClient::CompletionClient(CompletionConfig config)
    : config_(std::move(config)), slots_(std::make_unique<std::counting_semaphore<>>(config_.max_in_flight)) {
  config_.validate();
}

CompletionClient::~CompletionClient() = default;

std::string CompletionClient::complete(const std::string& prompt) const {
  const auto endpoint = split_url(config_.url);
  nlohmann::json body = {{"model", config_.model},
                         {"messages", {{{"role", "user"}, {"content", prompt}}}},
                         {"max_tokens", config_.max_new_tokens},
                         {"temperature", config_.temperature}};
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  slots_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{slots_.get()};

  httplib::Client client(endpoint.base);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);

  std::string last_error;
  auto backoff = config_.initial_backoff;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Post(endpoint.path, headers, payload, "application/json");
    if (!res) {
      last_error = "network error: " + httplib::to_string(res.error());
      continue;
    }
    if (retryable(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw RemoteError("completion endpoint returned HTTP " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 200));
    std::string content;
    try {
      const auto j = nlohmann::json::parse(res->body);
      const auto& message = j.at("choices").at(0).at("message").at("content");
      if (message.is_string()) content = message.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw RemoteError(std::string("malformed completion response: ") + e.what());
    }
    if (content.find_first_not_of(" \t\r\n") == std::string::npos)
      throw GenerationError("completion endpoint returned an empty remark");
    return content;
  }
  throw RemoteError("completion endpoint failed after " + std::to_string(config_.max_attempts) +
                    " attempts (" + last_error + ")");
}

RemarkGenerator::RemarkGenerator(CompletionConfig config, KnowledgeBank bank, PromptTemplate prompt,
                                 const data::ClinicalSchema& schema)
    : config_(std::move(config)), bank_(std::move(bank)), prompt_(std::move(prompt)), schema_(schema) {
  config_.validate();
  if (!config_.stub) client_ = std::make_unique<CompletionClient>(config_);
}

Remark RemarkGenerator::generate(const data::ClinicalFields& fields) const {
  const std::string summary = summarize(fields, schema_);
  if (config_.stub) return stub_remark(fields);
  return {client_->complete(compose_prompt(summary, bank_.text, prompt_.text)), RemarkOrigin::llm_generated,
          config_.model};
}

Remark RemarkGenerator::generate_stub(const data::ClinicalFields& fields) const {
  summarize(fields, schema_);  // same schema check as the LLM path
  return stub_remark(fields);
}

}  // namespace miracle::remarks
