#include "nlq/llm/gateway.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <thread>

#include "nlq/util/files.hpp"

#ifndef NLQ_PROMPT_DIR
#define NLQ_PROMPT_DIR "prompts/v1"
#endif

namespace nlq::llm {

const char* to_string(TemplateId id) {
  switch (id) {
    case TemplateId::kClassifyIntent: return "classify_intent";
    case TemplateId::kGenerateSql: return "generate_sql";
    case TemplateId::kIntrospect: return "introspect";
    case TemplateId::kRefineSql: return "refine_sql";
    case TemplateId::kAnswer: return "answer";
  }
  return "?";
}

std::optional<TemplateId> parse_template_id(std::string_view text) {
  for (auto id : kAllTemplates) {
    if (text == to_string(id)) return id;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Templates

namespace {

struct Placeholder {
  std::size_t begin;
  std::size_t end;  // one past "}}"
  std::string name;
};

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

std::vector<Placeholder> scan_placeholders(const std::string& src) {
  std::vector<Placeholder> out;
  std::size_t pos = 0;
  while ((pos = src.find("{{", pos)) != std::string::npos) {
    auto close = src.find("}}", pos + 2);
    if (close == std::string::npos) break;
    std::string name = src.substr(pos + 2, close - pos - 2);
    bool valid = !name.empty() && std::all_of(name.begin(), name.end(), is_name_char);
    if (valid) {
      out.push_back({pos, close + 2, std::move(name)});
      pos = close + 2;
    } else {
      pos += 2;
    }
  }
  return out;
}

}  // namespace

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  std::map<TemplateId, std::string> sources;
  for (auto id : kAllTemplates) {
    auto path = dir / (std::string(to_string(id)) + ".txt");
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("prompt template not found: " + path.string());
    }
    sources[id] = util::read_file(path);
  }
  return from_strings(std::move(sources));
}

PromptTemplates PromptTemplates::from_strings(std::map<TemplateId, std::string> sources) {
  for (auto id : kAllTemplates) {
    if (!sources.count(id)) {
      throw std::invalid_argument(std::string("missing template ") + to_string(id));
    }
  }
  PromptTemplates t;
  t.sources_ = std::move(sources);
  return t;
}

const std::string& PromptTemplates::source(TemplateId id) const { return sources_.at(id); }

std::vector<std::string> PromptTemplates::placeholders(TemplateId id) const {
  std::vector<std::string> names;
  for (auto& p : scan_placeholders(source(id))) {
    if (std::find(names.begin(), names.end(), p.name) == names.end()) names.push_back(p.name);
  }
  return names;
}

std::string PromptTemplates::render(TemplateId id, const Bindings& bindings) const {
  const auto& src = source(id);
  auto holes = scan_placeholders(src);
  for (const auto& p : holes) {
    if (!bindings.count(p.name)) throw MissingBinding(p.name);
  }
  std::string out;
  out.reserve(src.size() * 2);
  std::size_t cursor = 0;
  for (const auto& p : holes) {
    out.append(src, cursor, p.begin - cursor);
    out += bindings.at(p.name);
    cursor = p.end;
  }
  out.append(src, cursor, std::string::npos);
  return out;
}

std::filesystem::path default_prompt_dir() { return NLQ_PROMPT_DIR; }

// ---------------------------------------------------------------------------
// Scripted backend

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries) : entries_(std::move(entries)) {}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  auto doc = nlohmann::json::parse(util::read_file(path));
  if (!doc.is_array()) throw std::runtime_error(path.string() + ": script must be a JSON array");
  std::vector<Entry> entries;
  for (const auto& e : doc) {
    auto name = e.at("template").get<std::string>();
    auto id = parse_template_id(name);
    if (!id) throw std::runtime_error(path.string() + ": unknown template '" + name + "'");
    entries.push_back({*id, e.value("match", std::string()), e.at("response").get<std::string>()});
  }
  return std::make_unique<ScriptedBackend>(std::move(entries));
}

void ScriptedBackend::add(Entry entry) {
  std::lock_guard lock(mu_);
  entries_.push_back(std::move(entry));
}

Completion ScriptedBackend::complete(const CompletionRequest& request) {
  std::lock_guard lock(mu_);
  calls_.push_back(request);
  for (const auto& e : entries_) {
    if (e.template_id != request.template_id) continue;
    if (!e.match.empty() && request.rendered_prompt.find(e.match) == std::string::npos) continue;
    return Completion{e.response, id(), 0};
  }
  throw BackendUnavailable(std::string("NoScriptMatch: no scripted response for template ") +
                           to_string(request.template_id));
}

std::vector<CompletionRequest> ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

void ScriptedBackend::clear_calls() {
  std::lock_guard lock(mu_);
  calls_.clear();
}

// ---------------------------------------------------------------------------
// Rate limiting and the gateway

RateLimiter::RateLimiter(double requests_per_minute)
    : capacity_(requests_per_minute),
      tokens_(requests_per_minute),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (capacity_ <= 0.0) return;
  const double per_second = capacity_ / 60.0;
  while (true) {
    std::chrono::duration<double> wait{};
    {
      std::lock_guard lock(mu_);
      auto now = std::chrono::steady_clock::now();
      std::chrono::duration<double> elapsed = now - last_;
      last_ = now;
      tokens_ = std::min(capacity_, tokens_ + elapsed.count() * per_second);
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::duration<double>((1.0 - tokens_) / per_second);
    }
    std::this_thread::sleep_for(wait);
  }
}

Gateway::Gateway(std::shared_ptr<Backend> backend, PromptTemplates templates,
                 double requests_per_minute)
    : backend_(std::move(backend)), templates_(std::move(templates)), limiter_(requests_per_minute) {
  if (!backend_) throw std::invalid_argument("Gateway requires a backend");
}

Completion Gateway::complete(const CompletionRequest& request) {
  if (request.rendered_prompt.empty()) throw std::invalid_argument("empty prompt");
  limiter_.acquire();
  auto start = std::chrono::steady_clock::now();
  auto completion = backend_->complete(request);
  completion.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start)
                              .count();
  return completion;
}

}  // namespace nlq::llm
