#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlq/db/connection.hpp"
#include "nlq/index/vector_index.hpp"

namespace nlq::schema {

// Column type classes, following the engine's declared-type affinity rules.
enum class TypeClass { kText, kInteger, kReal, kNumeric, kBlob };

const char* to_string(TypeClass type_class);
TypeClass classify_declared_type(std::string_view declared_type);

struct ScanOptions {
  std::int64_t categorical_max_distinct = 20;
  std::set<TypeClass> categorical_type_filter = {TypeClass::kText};
  std::optional<std::int64_t> max_tables;
  // Per-query budget for row counts and value harvesting.
  std::chrono::milliseconds query_budget{5000};

  bool operator==(const ScanOptions&) const = default;
};

struct ColumnInfo {
  std::string name;
  std::string declared_type;
  bool nullable = true;
  bool operator==(const ColumnInfo&) const = default;
};

struct ForeignKey {
  std::vector<std::string> local_columns;
  std::string referenced_table;
  std::vector<std::string> referenced_columns;
  bool operator==(const ForeignKey&) const = default;
};

struct TableInfo {
  std::string name;
  std::vector<ColumnInfo> columns;
  std::vector<std::string> primary_key;
  std::vector<ForeignKey> foreign_keys;
  std::map<std::string, std::vector<std::string>> categorical_values;
  std::optional<std::int64_t> approx_row_count;

  const ColumnInfo* find_column(std::string_view name) const;
  bool operator==(const TableInfo&) const = default;
};

struct SchemaSnapshot {
  std::string database_name;
  std::vector<TableInfo> tables;  // ordered by name
  std::string scanned_at;         // ISO-8601 UTC
  ScanOptions scan_options;

  const TableInfo* find_table(std::string_view name) const;
  bool operator==(const SchemaSnapshot&) const = default;
};

class ScanError : public std::runtime_error {
 public:
  explicit ScanError(db::ExecError cause);
  ScanError(const std::string& message, db::ExecError cause);
  const db::ExecError& cause() const { return cause_; }

 private:
  db::ExecError cause_;
};

// Reads tables, columns, keys, categorical values and row counts. Throws
// ScanError; never returns a partial snapshot.
SchemaSnapshot scan(db::Connection& conn, const ScanOptions& options = {});

// Throws std::invalid_argument describing the first broken invariant.
void validate(const SchemaSnapshot& snapshot);

// The fixed plain-text layout of one table_doc chunk.
std::string render_table_doc(const TableInfo& table);

// One table_doc chunk per table, source_ref = table name.
std::vector<index::ContextChunk> render_chunks(const SchemaSnapshot& snapshot,
                                               const index::Embedder& embedder);

// Canonical JSON (sorted keys).
nlohmann::json to_json(const SchemaSnapshot& snapshot);
SchemaSnapshot snapshot_from_json(const nlohmann::json& doc);

std::string utc_now_iso8601();

}  // namespace nlq::schema
