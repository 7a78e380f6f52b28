#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nlq/db/connection.hpp"

namespace nlq::guard {

enum class GuardStatus { kOk, kSyntaxError, kReadOnlyViolation, kMultiStatement };

const char* to_string(GuardStatus status);

struct GuardVerdict {
  GuardStatus status = GuardStatus::kOk;
  std::string detail;  // empty iff ok

  bool ok() const { return status == GuardStatus::kOk; }
};

// Statement-class check without touching any database: exactly one statement,
// and that statement is a query (SELECT, VALUES-free WITH ... SELECT).
// Reference and dialect errors are left to the engine dry-run.
GuardVerdict guard_check(std::string_view sql);

class PreconditionViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// "SELECT * FROM (<sql>) AS _probe LIMIT <n>" with any trailing semicolon
// (and trailing trivia) stripped from the inner query.
std::string build_probe(std::string_view sql, std::int64_t n);

// Runs build_probe(sql, n). Zero rows is a success.
db::ExecResult dry_run(db::Connection& conn, std::string_view sql,
                       std::int64_t n = db::kProbeRowCap);

// Canonical cell used for execution matching. Floats are rounded to six
// decimals; a float whose rounded value is integral is folded into the
// integer kind so 2.0 and 2 compare equal.
struct CanonicalNull {
  auto operator<=>(const CanonicalNull&) const = default;
};
struct CanonicalText {
  std::string value;
  auto operator<=>(const CanonicalText&) const = default;
};
struct CanonicalBlob {
  std::string hex;
  auto operator<=>(const CanonicalBlob&) const = default;
};
using CanonicalCell = std::variant<CanonicalNull, std::int64_t, double, CanonicalText, CanonicalBlob>;

CanonicalCell canonicalize(const db::Cell& cell);

// Row multiset, stored sorted.
class NormalizedRows {
 public:
  explicit NormalizedRows(const db::ResultTable& table);

  const std::vector<std::vector<CanonicalCell>>& rows() const { return rows_; }
  bool operator==(const NormalizedRows& other) const { return rows_ == other.rows_; }

 private:
  std::vector<std::vector<CanonicalCell>> rows_;
};

// Multiset equality of canonicalized rows. Column names are ignored, column
// order matters, row order does not.
bool rows_equal(const db::ResultTable& a, const db::ResultTable& b);

// Lexical helpers shared with the pipeline.
namespace lex {

enum class TokenKind { kWord, kNumber, kString, kQuotedIdent, kParam, kSymbol, kSemicolon };

struct Token {
  TokenKind kind;
  std::string text;  // words are upper-cased
  std::size_t offset;
  std::size_t end;
};

struct LexResult {
  std::vector<Token> tokens;
  std::string error;  // non-empty on an unterminated literal or comment
};

LexResult tokenize(std::string_view sql);

}  // namespace lex

}  // namespace nlq::guard
