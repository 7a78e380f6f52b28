#include <algorithm>
#include <cctype>
#include <ctime>
#include <limits>
#include <map>
#include <sstream>

#include "nlq/schema/snapshot.hpp"

namespace nlq::schema {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string quote_ident(std::string_view name) {
  std::string out = "\"";
  for (char c : name) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

bool is_interrupt(const db::ExecError& e) { return e.message == db::kInterruptedMessage; }

// Runs a bounded helper query. nullopt means the budget ran out.
std::optional<db::ResultTable> budgeted(db::Connection& conn, const std::string& sql,
                                        std::int64_t row_cap, const ScanOptions& options) {
  conn.set_deadline(std::chrono::steady_clock::now() + options.query_budget);
  auto result = conn.execute(sql, row_cap);
  conn.set_deadline(std::nullopt);
  if (result) return std::move(result).value();
  if (is_interrupt(result.error())) return std::nullopt;
  throw ScanError(result.error());
}

const TableInfo* find_ci(const std::vector<TableInfo>& tables, std::string_view name) {
  auto key = lower(name);
  for (const auto& t : tables) {
    if (lower(t.name) == key) return &t;
  }
  return nullptr;
}

const ColumnInfo* find_column_ci(const TableInfo& table, std::string_view name) {
  auto key = lower(name);
  for (const auto& c : table.columns) {
    if (lower(c.name) == key) return &c;
  }
  return nullptr;
}

// Resolves engine FK rows against the scanned tables; edges whose target
// cannot be resolved are dropped so the snapshot invariant holds.
void resolve_foreign_keys(std::vector<TableInfo>& tables,
                          const std::vector<db::CatalogForeignKey>& rows) {
  std::map<std::pair<std::string, int>, std::vector<const db::CatalogForeignKey*>> grouped;
  for (const auto& r : rows) grouped[{r.table, r.constraint_id}].push_back(&r);

  for (auto& table : tables) {
    std::vector<ForeignKey> resolved;
    for (const auto& [key, parts] : grouped) {
      if (key.first != table.name) continue;
      const TableInfo* target = find_ci(tables, parts.front()->referenced_table);
      if (!target) continue;
      ForeignKey fk;
      fk.referenced_table = target->name;
      bool ok = true;
      for (std::size_t i = 0; i < parts.size() && ok; ++i) {
        const auto* local = find_column_ci(table, parts[i]->from_column);
        std::string ref_name = parts[i]->referenced_column;
        if (ref_name.empty()) {
          // Implicit reference to the target's primary key.
          if (i < target->primary_key.size()) ref_name = target->primary_key[i];
        }
        const auto* ref = ref_name.empty() ? nullptr : find_column_ci(*target, ref_name);
        if (!local || !ref) {
          ok = false;
          break;
        }
        fk.local_columns.push_back(local->name);
        fk.referenced_columns.push_back(ref->name);
      }
      if (ok && !fk.local_columns.empty()) resolved.push_back(std::move(fk));
    }
    table.foreign_keys = std::move(resolved);
  }
}

}  // namespace

const char* to_string(TypeClass type_class) {
  switch (type_class) {
    case TypeClass::kText: return "text";
    case TypeClass::kInteger: return "integer";
    case TypeClass::kReal: return "real";
    case TypeClass::kNumeric: return "numeric";
    case TypeClass::kBlob: return "blob";
  }
  return "?";
}

TypeClass classify_declared_type(std::string_view declared_type) {
  auto t = upper(declared_type);
  if (t.find("INT") != std::string::npos) return TypeClass::kInteger;
  if (t.find("CHAR") != std::string::npos || t.find("CLOB") != std::string::npos ||
      t.find("TEXT") != std::string::npos) {
    return TypeClass::kText;
  }
  if (t.empty() || t.find("BLOB") != std::string::npos) return TypeClass::kBlob;
  if (t.find("REAL") != std::string::npos || t.find("FLOA") != std::string::npos ||
      t.find("DOUB") != std::string::npos) {
    return TypeClass::kReal;
  }
  return TypeClass::kNumeric;
}

const ColumnInfo* TableInfo::find_column(std::string_view name) const {
  for (const auto& c : columns) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

const TableInfo* SchemaSnapshot::find_table(std::string_view name) const {
  for (const auto& t : tables) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

ScanError::ScanError(db::ExecError cause)
    : std::runtime_error("scan failed: " + cause.message), cause_(std::move(cause)) {}

ScanError::ScanError(const std::string& message, db::ExecError cause)
    : std::runtime_error(message), cause_(std::move(cause)) {}

std::string utc_now_iso8601() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

SchemaSnapshot scan(db::Connection& conn, const ScanOptions& options) {
  if (options.categorical_max_distinct < 1) {
    throw std::invalid_argument("categorical_max_distinct must be >= 1");
  }
  auto catalog = conn.catalog();
  if (!catalog) throw ScanError(catalog.error());

  SchemaSnapshot snap;
  snap.database_name = conn.profile().name;
  snap.scan_options = options;

  auto names = catalog->tables;
  std::sort(names.begin(), names.end());
  if (options.max_tables && static_cast<std::int64_t>(names.size()) > *options.max_tables) {
    names.resize(static_cast<std::size_t>(std::max<std::int64_t>(0, *options.max_tables)));
  }

  for (const auto& name : names) {
    TableInfo table;
    table.name = name;
    std::vector<std::pair<int, std::string>> pk;
    for (const auto& c : catalog->columns) {
      if (c.table != name) continue;
      table.columns.push_back({c.name, c.declared_type, !c.not_null});
      if (c.pk_position > 0) pk.emplace_back(c.pk_position, c.name);
    }
    std::sort(pk.begin(), pk.end());
    for (auto& [pos, col] : pk) table.primary_key.push_back(std::move(col));
    snap.tables.push_back(std::move(table));
  }
  resolve_foreign_keys(snap.tables, catalog->foreign_keys);

  for (auto& table : snap.tables) {
    if (auto count = budgeted(conn, "SELECT COUNT(*) FROM " + quote_ident(table.name), 1, options)) {
      table.approx_row_count = std::get<std::int64_t>(count->rows.at(0).at(0));
    }
    for (const auto& col : table.columns) {
      if (!options.categorical_type_filter.count(classify_declared_type(col.declared_type))) {
        continue;
      }
      auto values = budgeted(conn,
                             "SELECT DISTINCT " + quote_ident(col.name) + " FROM " +
                                 quote_ident(table.name) + " WHERE " + quote_ident(col.name) +
                                 " IS NOT NULL",
                             options.categorical_max_distinct, options);
      if (!values || values->truncated) continue;
      std::vector<std::string> distinct;
      for (const auto& row : values->rows) distinct.push_back(db::cell_to_text(row.at(0)));
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      table.categorical_values[col.name] = std::move(distinct);
    }
  }
  snap.scanned_at = utc_now_iso8601();
  return snap;
}

void validate(const SchemaSnapshot& snapshot) {
  std::set<std::string> names;
  for (const auto& t : snapshot.tables) {
    if (!names.insert(t.name).second) throw std::invalid_argument("duplicate table " + t.name);
  }
  for (const auto& t : snapshot.tables) {
    for (const auto& pk : t.primary_key) {
      if (!t.find_column(pk)) throw std::invalid_argument(t.name + ": primary key column " + pk + " missing");
    }
    for (const auto& fk : t.foreign_keys) {
      const auto* target = snapshot.find_table(fk.referenced_table);
      if (!target) throw std::invalid_argument(t.name + ": FK to unknown table " + fk.referenced_table);
      if (fk.local_columns.size() != fk.referenced_columns.size()) {
        throw std::invalid_argument(t.name + ": FK column count mismatch");
      }
      for (const auto& c : fk.local_columns) {
        if (!t.find_column(c)) throw std::invalid_argument(t.name + ": FK column " + c + " missing");
      }
      for (const auto& c : fk.referenced_columns) {
        if (!target->find_column(c)) {
          throw std::invalid_argument(t.name + ": FK target column " + c + " missing");
        }
      }
    }
    for (const auto& [col, values] : t.categorical_values) {
      if (!t.find_column(col)) throw std::invalid_argument(t.name + ": values for unknown column " + col);
      if (static_cast<std::int64_t>(values.size()) > snapshot.scan_options.categorical_max_distinct) {
        throw std::invalid_argument(t.name + "." + col + ": too many categorical values");
      }
    }
  }
}

}  // namespace nlq::schema
