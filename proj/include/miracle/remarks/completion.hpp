#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <semaphore>
#include <string>

#include "miracle/data/patient.hpp"

namespace miracle::remarks {

enum class RemarkOrigin { llm_generated, clinician_edited, stub };

std::string to_string(RemarkOrigin origin);
RemarkOrigin remark_origin_from_string(const std::string& s);

struct Remark {
  std::string text;
  RemarkOrigin origin = RemarkOrigin::stub;
  std::string model_name;

  bool operator==(const Remark&) const = default;
};

inline constexpr const char* kStubModelName = "rule-based-stub";

/// Plain-text asset loaded verbatim. Empty or unreadable files are a ConfigError.
struct TextAsset {
  std::string text;
  std::filesystem::path source_path;

  static TextAsset load(const std::filesystem::path& path);
};

using KnowledgeBank = TextAsset;
using PromptTemplate = TextAsset;

/// Built-in knowledge bank and instruction prompt, used when no asset path is
/// configured. Identical to assets/knowledge_bank.txt and assets/prompt.txt.
const KnowledgeBank& default_knowledge_bank();
const PromptTemplate& default_prompt();

/// summary, bank and prompt joined in that order by blank lines.
std::string compose_prompt(const std::string& summary, const std::string& bank, const std::string& prompt);

/// Deterministic remark from graded rules over the pulmonary function,
/// age, smoking and procedure fields. Fields the schema lacks are skipped.
Remark stub_remark(const data::ClinicalFields& fields);

struct CompletionConfig {
  std::string url;  // full chat-completion endpoint, e.g. http://host:port/v1/chat/completions
  std::string api_key;
  std::string model = "gpt-4o-mini";
  int max_new_tokens = 2000;
  double temperature = 0.9;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
  std::chrono::seconds timeout{60};
  int max_in_flight = 4;
  bool stub = false;

  /// MIRACLE_LLM_URL, MIRACLE_LLM_API_KEY, MIRACLE_LLM_MODEL, MIRACLE_LLM_STUB.
  /// Stub mode is forced when no URL is configured.
  static CompletionConfig from_env();
  void validate() const;
};

/// Generic chat-completion client. Thread-safe; at most max_in_flight
/// requests are outstanding at once.
class CompletionClient {
 public:
  explicit CompletionClient(CompletionConfig config);
  ~CompletionClient();

  /// Sends `prompt` as one user message and returns the first choice's content.
  /// Network failures, 429 and 5xx are retried with exponential backoff, then
  /// raise RemoteError; other 4xx raise RemoteError at once; an empty
  /// completion raises GenerationError.
  std::string complete(const std::string& prompt) const;

  const CompletionConfig& config() const { return config_; }

 private:
  CompletionConfig config_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
};

/// Produces M from (S, K, P). Stub mode never touches the network.
class RemarkGenerator {
 public:
  RemarkGenerator(CompletionConfig config, KnowledgeBank bank = default_knowledge_bank(),
                  PromptTemplate prompt = default_prompt(),
                  const data::ClinicalSchema& schema = data::ClinicalSchema::stand_in());

  Remark generate(const data::ClinicalFields& fields) const;
  /// Stub remark, regardless of configuration.
  Remark generate_stub(const data::ClinicalFields& fields) const;

  bool stub() const { return config_.stub; }
  const CompletionConfig& config() const { return config_; }
  const data::ClinicalSchema& schema() const { return schema_; }

 private:
  CompletionConfig config_;
  KnowledgeBank bank_;
  PromptTemplate prompt_;
  data::ClinicalSchema schema_;
  std::unique_ptr<CompletionClient> client_;
};

}  // namespace miracle::remarks
