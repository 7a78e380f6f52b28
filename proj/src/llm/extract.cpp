#include <cctype>
#include <regex>

#include "nlq/guard/sql_guard.hpp"
#include "nlq/llm/gateway.hpp"

namespace nlq::llm {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Cuts at the first unquoted ';' (and drops everything after it).
std::string first_statement(std::string_view text) {
  auto lexed = guard::lex::tokenize(text);
  for (const auto& t : lexed.tokens) {
    if (t.kind == guard::lex::TokenKind::kSemicolon) return trim(text.substr(0, t.offset));
  }
  // No terminator, or an unterminated literal swallows the rest: keep it all
  // and let the guard reject it.
  return trim(text);
}

// True when anything other than trivia follows the first unquoted ';'.
bool has_second_statement(std::string_view text) {
  auto lexed = guard::lex::tokenize(text);
  bool seen_semicolon = false;
  for (const auto& t : lexed.tokens) {
    if (t.kind == guard::lex::TokenKind::kSemicolon) {
      seen_semicolon = true;
    } else if (seen_semicolon) {
      return true;
    }
  }
  return false;
}

bool word_at(std::string_view text, std::size_t pos, std::string_view word) {
  if (pos + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (std::toupper(static_cast<unsigned char>(text[pos + i])) != word[i]) return false;
  }
  auto boundary = [](char c) {
    return !(std::isalnum(static_cast<unsigned char>(c)) || c == '_');
  };
  bool left = pos == 0 || boundary(text[pos - 1]);
  bool right = pos + word.size() == text.size() || boundary(text[pos + word.size()]);
  return left && right;
}

}  // namespace

Expected<std::string, ExtractionError> extract_sql(std::string_view text) {
  static const std::regex kFence(R"(```[ \t]*(sql|SQL|Sql)[ \t]*\r?\n([\s\S]*?)```)");
  std::string owned(text);
  std::smatch m;
  if (std::regex_search(owned, m, kFence)) {
    if (has_second_statement(m[2].str())) {
      return unexpected(ExtractionError{"fenced SQL block holds more than one statement"});
    }
    auto body = first_statement(m[2].str());
    if (!body.empty()) return body;
  }
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    if (!word_at(text, pos, "SELECT") && !word_at(text, pos, "WITH")) continue;
    auto rest = text.substr(pos);
    if (auto fence = rest.find("```"); fence != std::string_view::npos) rest = rest.substr(0, fence);
    auto stmt = first_statement(rest);
    if (!stmt.empty()) return stmt;
  }
  return unexpected(ExtractionError{"no SQL query found in model output"});
}

VerdictResult extract_verdict(std::string_view text) {
  static const std::regex kVerdict(R"(^\s*VERDICT\s*:\s*(PASS|FAIL)\b[ \t.]*$)", std::regex::icase);
  std::string remaining;
  std::optional<Verdict> verdict;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    std::string line_str(line);
    std::smatch m;
    if (!verdict && std::regex_match(line_str, m, kVerdict)) {
      auto word = m[1].str();
      verdict = (std::toupper(static_cast<unsigned char>(word[0])) == 'P') ? Verdict::kPass
                                                                          : Verdict::kFail;
    } else {
      remaining += line_str;
      remaining.push_back('\n');
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  if (!verdict) return {Verdict::kFail, trim(text)};
  return {*verdict, trim(remaining)};
}

}  // namespace nlq::llm
