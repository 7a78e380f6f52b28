#pragma once

#include <compare>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "nlq/util/expected.hpp"

namespace nlq::db {

inline constexpr std::int64_t kDefaultRowCap = 1000;
inline constexpr std::int64_t kProbeRowCap = 10;

enum class ConnectionKind { kEmbeddedFile, kNetwork };

const char* to_string(ConnectionKind kind);
std::optional<ConnectionKind> parse_connection_kind(std::string_view text);

struct ConnectionProfile {
  std::string name;
  ConnectionKind kind = ConnectionKind::kEmbeddedFile;
  std::string location;
  std::int64_t default_row_cap = kDefaultRowCap;
};

// Blob cells are carried as lowercase hex.
struct BlobHex {
  std::string hex;
  auto operator<=>(const BlobHex&) const = default;
};

using Cell = std::variant<std::monostate, std::int64_t, double, std::string, BlobHex>;

std::string cell_to_text(const Cell& cell);

struct ResultColumn {
  std::string name;
  std::string declared_type;
  bool operator==(const ResultColumn&) const = default;
};

struct ResultTable {
  std::vector<ResultColumn> columns;
  std::vector<std::vector<Cell>> rows;
  bool truncated = false;

  bool operator==(const ResultTable&) const = default;
};

enum class ExecPhase { kPrepare, kExecute };

const char* to_string(ExecPhase phase);

struct ExecError {
  ExecPhase phase = ExecPhase::kPrepare;
  std::string message;  // verbatim engine text
  std::string sql;
};

using ExecResult = Expected<ResultTable, ExecError>;

class ConnectFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw catalog rows as reported by the engine.
struct CatalogColumn {
  std::string table;
  std::string name;
  std::string declared_type;
  bool not_null = false;
  int pk_position = 0;  // 1-based position in the primary key, 0 if not part of it
};

struct CatalogForeignKey {
  std::string table;
  int constraint_id = 0;
  int seq = 0;
  std::string from_column;
  std::string referenced_table;
  std::string referenced_column;  // empty when the engine leaves it implicit (the PK)
};

struct Catalog {
  std::vector<std::string> tables;
  std::vector<CatalogColumn> columns;
  std::vector<CatalogForeignKey> foreign_keys;
};

// Single-threaded handle. Open one per thread.
class Connection {
 public:
  virtual ~Connection() = default;

  virtual const ConnectionProfile& profile() const = 0;

  // Returns at most `row_cap` rows (profile default when absent); `truncated`
  // is set iff more rows were available.
  virtual ExecResult execute(const std::string& sql,
                             std::optional<std::int64_t> row_cap = std::nullopt) = 0;

  virtual Expected<Catalog, ExecError> catalog() = 0;

  // Statements running past the deadline are interrupted and fail with
  // phase=execute.
  virtual void set_deadline(std::optional<std::chrono::steady_clock::time_point> deadline) = 0;
};

std::unique_ptr<Connection> connect(const ConnectionProfile& profile);

// Message used for statements interrupted by a deadline.
inline constexpr const char* kInterruptedMessage = "interrupted: deadline exceeded";

}  // namespace nlq::db
