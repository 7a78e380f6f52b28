#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nlq/util/expected.hpp"

namespace nlq::llm {

enum class TemplateId { kClassifyIntent, kGenerateSql, kIntrospect, kRefineSql, kAnswer };

inline constexpr TemplateId kAllTemplates[] = {TemplateId::kClassifyIntent, TemplateId::kGenerateSql,
                                               TemplateId::kIntrospect, TemplateId::kRefineSql,
                                               TemplateId::kAnswer};

const char* to_string(TemplateId id);
std::optional<TemplateId> parse_template_id(std::string_view text);

struct CompletionRequest {
  TemplateId template_id = TemplateId::kGenerateSql;
  std::string rendered_prompt;
  std::int64_t max_output_tokens = 1024;
  double temperature = 0.0;
};

struct Completion {
  std::string text;
  std::string backend_id;
  std::int64_t latency_ms = 0;
};

class BackendUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Timeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  // Throws BackendUnavailable or Timeout.
  virtual Completion complete(const CompletionRequest& request) = 0;
  virtual std::string id() const = 0;
};

// Canned responses keyed by (template, prompt substring). The first matching
// entry wins; an empty match string matches any prompt.
class ScriptedBackend final : public Backend {
 public:
  struct Entry {
    TemplateId template_id;
    std::string match;
    std::string response;
  };

  ScriptedBackend() = default;
  explicit ScriptedBackend(std::vector<Entry> entries);

  // JSON array of {"template": "...", "match": "...", "response": "..."}.
  static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  void add(Entry entry);
  Completion complete(const CompletionRequest& request) override;
  std::string id() const override { return "scripted"; }

  std::vector<CompletionRequest> calls() const;
  void clear_calls();

 private:
  mutable std::mutex mu_;
  std::vector<Entry> entries_;
  std::vector<CompletionRequest> calls_;
};

struct HttpBackendConfig {
  std::string url;    // chat-completion endpoint, e.g. http://host:8000/v1/chat/completions
  std::string model;
  std::map<TemplateId, std::string> model_per_template;
  std::string auth_env_var;  // bearer token read from this variable when set
  int retry_max = 2;
  std::chrono::milliseconds timeout{60000};
  std::chrono::milliseconds initial_backoff{250};
};

// Standard chat-completion JSON over HTTP.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;

  Completion complete(const CompletionRequest& request) override;
  std::string id() const override { return "http:" + config_.model; }

 private:
  struct Endpoint;
  HttpBackendConfig config_;
  std::unique_ptr<Endpoint> endpoint_;
};

// Token bucket: capacity = requests_per_minute, refilled continuously.
// Zero disables limiting.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_minute = 0.0);
  void acquire();

 private:
  std::mutex mu_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

class MissingBinding : public std::invalid_argument {
 public:
  explicit MissingBinding(std::string placeholder)
      : std::invalid_argument("missing binding for placeholder '" + placeholder + "'"),
        placeholder_(std::move(placeholder)) {}
  const std::string& placeholder() const { return placeholder_; }

 private:
  std::string placeholder_;
};

using Bindings = std::map<std::string, std::string>;

// Prompt templates with {{name}} placeholders, one file per template
// (<dir>/<template_id>.txt).
class PromptTemplates {
 public:
  static PromptTemplates load(const std::filesystem::path& dir);
  static PromptTemplates from_strings(std::map<TemplateId, std::string> sources);

  std::string render(TemplateId id, const Bindings& bindings) const;
  std::vector<std::string> placeholders(TemplateId id) const;
  const std::string& source(TemplateId id) const;

 private:
  std::map<TemplateId, std::string> sources_;
};

// Default prompt directory baked in at build time.
std::filesystem::path default_prompt_dir();

class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, PromptTemplates templates,
          double requests_per_minute = 0.0);

  Completion complete(const CompletionRequest& request);
  std::string render(TemplateId id, const Bindings& bindings) const {
    return templates_.render(id, bindings);
  }
  const PromptTemplates& templates() const { return templates_; }
  Backend& backend() { return *backend_; }

 private:
  std::shared_ptr<Backend> backend_;
  PromptTemplates templates_;
  RateLimiter limiter_;
};

struct ExtractionError {
  std::string message;
};

// A ```sql fenced block wins; otherwise the first statement starting with
// SELECT/WITH up to an unquoted ';' or end of text.
Expected<std::string, ExtractionError> extract_sql(std::string_view text);

enum class Verdict { kPass, kFail };

struct VerdictResult {
  Verdict verdict = Verdict::kFail;
  std::string critique;
};

// Looks for a "VERDICT: PASS|FAIL" line; anything else is a FAIL whose
// critique is the whole text.
VerdictResult extract_verdict(std::string_view text);

}  // namespace nlq::llm
