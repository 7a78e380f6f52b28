#include <algorithm>
#include <iomanip>
#include <sstream>

#include "nlq/pipeline/pipeline.hpp"
#include "nlq/util/files.hpp"

namespace nlq::pipeline {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

RuleStore::RuleStore(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.empty() || !std::filesystem::exists(file_)) return;
  auto doc = nlohmann::json::parse(util::read_file(file_));
  next_number_ = doc.at("next_number").get<int>();
  for (const auto& r : doc.at("rules")) rules_.push_back(rule_from_json(r));
}

BusinessRule RuleStore::add(std::string text, std::vector<std::string> tags) {
  text = trim(text);
  if (text.empty()) throw EmptyRule("rule text must not be empty");
  std::lock_guard lock(mu_);
  std::ostringstream id;
  id << "rule-" << std::setw(4) << std::setfill('0') << next_number_++;
  BusinessRule rule;
  rule.rule_id = id.str();
  rule.text = std::move(text);
  rule.tags = std::move(tags);
  rule.created_at = schema::utc_now_iso8601();
  rule.updated_at = rule.created_at;
  rules_.push_back(rule);
  save_locked();
  return rule;
}

BusinessRule RuleStore::deactivate(const std::string& rule_id) {
  std::lock_guard lock(mu_);
  auto it = std::find_if(rules_.begin(), rules_.end(),
                         [&](const auto& r) { return r.rule_id == rule_id && r.active; });
  if (it == rules_.end()) throw index::NotFound("no active rule '" + rule_id + "'");
  it->active = false;
  it->updated_at = schema::utc_now_iso8601();
  save_locked();
  return *it;
}

std::vector<BusinessRule> RuleStore::list(bool include_inactive) const {
  std::lock_guard lock(mu_);
  std::vector<BusinessRule> out;
  for (const auto& r : rules_) {
    if (r.active || include_inactive) out.push_back(r);
  }
  return out;
}

std::optional<BusinessRule> RuleStore::get(const std::string& rule_id) const {
  std::lock_guard lock(mu_);
  for (const auto& r : rules_) {
    if (r.rule_id == rule_id) return r;
  }
  return std::nullopt;
}

void RuleStore::save_locked() const {
  if (file_.empty()) return;
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : rules_) rules.push_back(to_json(r));
  nlohmann::json doc = {{"next_number", next_number_}, {"rules", rules}};
  util::write_file_atomic(file_, doc.dump(2));
}

std::string rule_chunk_id(const std::string& rule_id) { return "rule:" + rule_id; }

index::ContextChunk rule_chunk(const BusinessRule& rule, const index::Embedder& embedder) {
  auto chunk = index::make_chunk(index::ChunkKind::kRule, rule.rule_id, rule.text, embedder,
                                 rule_chunk_id(rule.rule_id));
  chunk.active = rule.active;
  return chunk;
}

BusinessRule add_rule(RuleScope scope, std::string text, Session* session, RuleStore* store,
                      const std::vector<index::VectorIndex*>& indexes) {
  text = trim(text);
  if (text.empty()) throw EmptyRule("rule text must not be empty");
  if (scope == RuleScope::kSession) {
    if (!session) throw std::invalid_argument("session scope requires a session");
    BusinessRule rule;
    rule.rule_id = "session-rule-" + std::to_string(session->session_rules.size() + 1);
    rule.text = std::move(text);
    rule.created_at = schema::utc_now_iso8601();
    rule.updated_at = rule.created_at;
    session->session_rules.push_back(rule);
    return rule;
  }
  if (!store) throw std::invalid_argument("global scope requires a rule store");
  auto rule = store->add(std::move(text));
  for (auto* idx : indexes) {
    if (idx) idx->upsert(rule_chunk(rule, idx->embedder()));
  }
  return rule;
}

}  // namespace nlq::pipeline
