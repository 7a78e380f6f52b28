#include "nlq/guard/sql_guard.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace nlq::guard {

const char* to_string(GuardStatus status) {
  switch (status) {
    case GuardStatus::kOk: return "ok";
    case GuardStatus::kSyntaxError: return "syntax_error";
    case GuardStatus::kReadOnlyViolation: return "read_only_violation";
    case GuardStatus::kMultiStatement: return "multi_statement";
  }
  return "?";
}

namespace lex {

namespace {

bool is_word_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' ||
         static_cast<unsigned char>(c) >= 0x80;
}
bool is_word_char(char c) {
  return is_word_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '$';
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

LexResult tokenize(std::string_view sql) {
  LexResult out;
  std::size_t i = 0;
  const std::size_t n = sql.size();
  auto push = [&](TokenKind kind, std::size_t begin, std::size_t end, std::string text) {
    out.tokens.push_back(Token{kind, std::move(text), begin, end});
  };
  while (i < n) {
    char c = sql[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
      while (i < n && sql[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
      auto close = sql.find("*/", i + 2);
      if (close == std::string_view::npos) {
        out.error = "unterminated block comment";
        return out;
      }
      i = close + 2;
    } else if (c == '\'' || c == '"' || c == '`' || c == '[') {
      char closing = c == '[' ? ']' : c;
      std::size_t begin = i++;
      bool closed = false;
      while (i < n) {
        if (sql[i] == closing) {
          // Doubled quote is an escaped quote; brackets have no escape.
          if (closing != ']' && i + 1 < n && sql[i + 1] == closing) {
            i += 2;
            continue;
          }
          closed = true;
          ++i;
          break;
        }
        ++i;
      }
      if (!closed) {
        out.error = c == '\'' ? "unterminated string literal" : "unterminated quoted identifier";
        return out;
      }
      push(c == '\'' ? TokenKind::kString : TokenKind::kQuotedIdent, begin, i,
           std::string(sql.substr(begin, i - begin)));
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
      std::size_t begin = i;
      while (i < n && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '.' ||
                       ((sql[i] == '+' || sql[i] == '-') &&
                        (sql[i - 1] == 'e' || sql[i - 1] == 'E')))) {
        ++i;
      }
      push(TokenKind::kNumber, begin, i, std::string(sql.substr(begin, i - begin)));
    } else if (is_word_start(c)) {
      std::size_t begin = i;
      while (i < n && is_word_char(sql[i])) ++i;
      push(TokenKind::kWord, begin, i, upper(sql.substr(begin, i - begin)));
    } else if (c == '?' || c == ':' || c == '@' || c == '$') {
      std::size_t begin = i++;
      while (i < n && is_word_char(sql[i])) ++i;
      push(TokenKind::kParam, begin, i, std::string(sql.substr(begin, i - begin)));
    } else if (c == ';') {
      push(TokenKind::kSemicolon, i, i + 1, ";");
      ++i;
    } else {
      push(TokenKind::kSymbol, i, i + 1, std::string(1, c));
      ++i;
    }
  }
  return out;
}

}  // namespace lex

namespace {

using lex::Token;
using lex::TokenKind;

const std::unordered_set<std::string>& write_keywords() {
  static const std::unordered_set<std::string> kWords = {
      "INSERT", "UPDATE",  "DELETE",  "REPLACE",  "MERGE",    "UPSERT", "CREATE",
      "DROP",   "ALTER",   "TRUNCATE", "RENAME",  "GRANT",    "REVOKE", "ATTACH",
      "DETACH", "PRAGMA",  "VACUUM",  "REINDEX",  "ANALYZE",  "BEGIN",  "COMMIT",
      "END",    "ROLLBACK", "SAVEPOINT", "RELEASE", "EXPLAIN", "VALUES", "COPY",
      "LOAD",   "CALL",    "EXEC",    "EXECUTE",  "SET",      "USE",    "LOCK",
      "UNLOCK", "COMMENT", "REFRESH", "OPTIMIZE", "DECLARE",  "DO"};
  return kWords;
}

std::vector<std::vector<Token>> split_statements(const std::vector<Token>& tokens) {
  std::vector<std::vector<Token>> stmts;
  std::vector<Token> current;
  for (const auto& t : tokens) {
    if (t.kind == TokenKind::kSemicolon) {
      if (!current.empty()) stmts.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(t);
    }
  }
  if (!current.empty()) stmts.push_back(std::move(current));
  return stmts;
}

GuardVerdict fail(GuardStatus status, std::string detail) {
  return GuardVerdict{status, std::move(detail)};
}

GuardVerdict violation(const std::string& keyword) {
  return fail(GuardStatus::kReadOnlyViolation,
              keyword + " statements are not allowed; only read-only SELECT queries are accepted");
}

// Main statement keyword of a WITH query: the first depth-0 word that starts
// a statement body. CTE bodies sit inside parentheses and are skipped.
std::string with_main_keyword(const std::vector<Token>& stmt) {
  int depth = 0;
  for (std::size_t i = 1; i < stmt.size(); ++i) {
    const auto& t = stmt[i];
    if (t.kind == TokenKind::kSymbol) {
      if (t.text == "(") ++depth;
      if (t.text == ")") --depth;
      continue;
    }
    if (depth != 0 || t.kind != TokenKind::kWord) continue;
    if (t.text == "SELECT" || write_keywords().count(t.text) != 0) return t.text;
  }
  return {};
}

}  // namespace

GuardVerdict guard_check(std::string_view sql) {
  auto lexed = lex::tokenize(sql);
  if (!lexed.error.empty()) return fail(GuardStatus::kSyntaxError, lexed.error);

  auto stmts = split_statements(lexed.tokens);
  if (stmts.empty()) return fail(GuardStatus::kSyntaxError, "empty statement");
  if (stmts.size() > 1) {
    return fail(GuardStatus::kMultiStatement,
                "expected exactly one statement, found " + std::to_string(stmts.size()));
  }
  const auto& stmt = stmts.front();

  int depth = 0;
  for (const auto& t : stmt) {
    if (t.kind != TokenKind::kSymbol) continue;
    if (t.text == "(") ++depth;
    if (t.text == ")" && --depth < 0) {
      return fail(GuardStatus::kSyntaxError, "unbalanced ')' at offset " + std::to_string(t.offset));
    }
  }
  if (depth != 0) return fail(GuardStatus::kSyntaxError, "unbalanced '(': missing ')'");

  const auto& head = stmt.front();
  if (head.kind != TokenKind::kWord) {
    return fail(GuardStatus::kSyntaxError, "statement does not start with a keyword: '" +
                                               std::string(head.text) + "'");
  }
  if (head.text == "SELECT") {
    if (stmt.size() == 1) return fail(GuardStatus::kSyntaxError, "SELECT without a result list");
    return {};
  }
  if (head.text == "WITH") {
    auto main = with_main_keyword(stmt);
    if (main.empty()) return fail(GuardStatus::kSyntaxError, "WITH clause without a main SELECT");
    if (main != "SELECT") return violation(main);
    return {};
  }
  if (write_keywords().count(head.text) != 0) return violation(head.text);
  return fail(GuardStatus::kSyntaxError, "unrecognized statement keyword '" + head.text + "'");
}

std::string build_probe(std::string_view sql, std::int64_t n) {
  if (n < 1) throw PreconditionViolation("probe row cap must be >= 1");
  auto verdict = guard_check(sql);
  if (!verdict.ok()) {
    throw PreconditionViolation(std::string("build_probe requires a guard-approved query: ") +
                                to_string(verdict.status) + ": " + verdict.detail);
  }
  auto lexed = lex::tokenize(sql);
  std::size_t begin = std::string_view::npos;
  std::size_t end = 0;
  for (const auto& t : lexed.tokens) {
    if (t.kind == TokenKind::kSemicolon) continue;
    if (begin == std::string_view::npos) begin = t.offset;
    end = t.end;
  }
  std::string inner(sql.substr(begin, end - begin));
  return "SELECT * FROM (" + inner + ") AS _probe LIMIT " + std::to_string(n);
}

db::ExecResult dry_run(db::Connection& conn, std::string_view sql, std::int64_t n) {
  return conn.execute(build_probe(sql, n), n);
}

CanonicalCell canonicalize(const db::Cell& cell) {
  struct Visitor {
    CanonicalCell operator()(std::monostate) const { return CanonicalNull{}; }
    CanonicalCell operator()(std::int64_t v) const { return v; }
    CanonicalCell operator()(double v) const {
      if (std::isnan(v)) return CanonicalText{"NaN"};
      if (std::isinf(v)) return v;
      double rounded = std::fabs(v) < 1e15 ? std::round(v * 1e6) / 1e6 : v;
      if (rounded == 0.0) rounded = 0.0;  // folds -0
      if (std::trunc(rounded) == rounded && std::fabs(rounded) < 9.0e18) {
        return static_cast<std::int64_t>(rounded);
      }
      return rounded;
    }
    CanonicalCell operator()(const std::string& v) const { return CanonicalText{v}; }
    CanonicalCell operator()(const db::BlobHex& v) const { return CanonicalBlob{v.hex}; }
  };
  return std::visit(Visitor{}, cell);
}

NormalizedRows::NormalizedRows(const db::ResultTable& table) {
  rows_.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::vector<CanonicalCell> out;
    out.reserve(row.size());
    for (const auto& cell : row) out.push_back(canonicalize(cell));
    rows_.push_back(std::move(out));
  }
  std::sort(rows_.begin(), rows_.end());
}

bool rows_equal(const db::ResultTable& a, const db::ResultTable& b) {
  if (a.rows.size() != b.rows.size()) return false;
  return NormalizedRows(a) == NormalizedRows(b);
}

}  // namespace nlq::guard
