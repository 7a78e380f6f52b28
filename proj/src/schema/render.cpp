#include <sstream>

#include "nlq/schema/snapshot.hpp"

namespace nlq::schema {

namespace {

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string sql_literal(const std::string& value) {
  std::string out = "'";
  for (char c : value) {
    if (c == '\'') out.push_back('\'');
    out.push_back(c);
  }
  out.push_back('\'');
  return out;
}

std::optional<TypeClass> parse_type_class(std::string_view s) {
  for (auto tc : {TypeClass::kText, TypeClass::kInteger, TypeClass::kReal, TypeClass::kNumeric,
                  TypeClass::kBlob}) {
    if (s == to_string(tc)) return tc;
  }
  return std::nullopt;
}

}  // namespace

// Layout:
//   TABLE <name>
//   COLUMN <name> <type|(untyped)> [NOT NULL]     one per column
//   PRIMARY KEY (<cols>)                          if any
//   FOREIGN KEY (<cols>) REFERENCES <t> (<cols>)  one per FK
//   VALUES <column>: '<v1>', '<v2>', ...          one per harvested column
//   ROWS <n>                                      if counted
std::string render_table_doc(const TableInfo& table) {
  std::ostringstream out;
  out << "TABLE " << table.name << '\n';
  for (const auto& c : table.columns) {
    out << "COLUMN " << c.name << ' ' << (c.declared_type.empty() ? "(untyped)" : c.declared_type);
    if (!c.nullable) out << " NOT NULL";
    out << '\n';
  }
  if (!table.primary_key.empty()) out << "PRIMARY KEY (" << join(table.primary_key, ", ") << ")\n";
  for (const auto& fk : table.foreign_keys) {
    out << "FOREIGN KEY (" << join(fk.local_columns, ", ") << ") REFERENCES "
        << fk.referenced_table << " (" << join(fk.referenced_columns, ", ") << ")\n";
  }
  for (const auto& c : table.columns) {
    auto it = table.categorical_values.find(c.name);
    if (it == table.categorical_values.end() || it->second.empty()) continue;
    std::vector<std::string> quoted;
    quoted.reserve(it->second.size());
    for (const auto& v : it->second) quoted.push_back(sql_literal(v));
    out << "VALUES " << c.name << ": " << join(quoted, ", ") << '\n';
  }
  if (table.approx_row_count) out << "ROWS " << *table.approx_row_count << '\n';
  return out.str();
}

std::vector<index::ContextChunk> render_chunks(const SchemaSnapshot& snapshot,
                                               const index::Embedder& embedder) {
  std::vector<index::ContextChunk> chunks;
  chunks.reserve(snapshot.tables.size());
  for (const auto& t : snapshot.tables) {
    chunks.push_back(
        index::make_chunk(index::ChunkKind::kTableDoc, t.name, render_table_doc(t), embedder));
  }
  return chunks;
}

nlohmann::json to_json(const SchemaSnapshot& snapshot) {
  using nlohmann::json;
  json tables = json::array();
  for (const auto& t : snapshot.tables) {
    json cols = json::array();
    for (const auto& c : t.columns) {
      cols.push_back({{"name", c.name}, {"declared_type", c.declared_type}, {"nullable", c.nullable}});
    }
    json fks = json::array();
    for (const auto& fk : t.foreign_keys) {
      fks.push_back({{"local_columns", fk.local_columns},
                     {"referenced_table", fk.referenced_table},
                     {"referenced_columns", fk.referenced_columns}});
    }
    json values = json::object();
    for (const auto& [col, vs] : t.categorical_values) values[col] = vs;
    json row_count = t.approx_row_count ? json(*t.approx_row_count) : json(nullptr);
    tables.push_back({{"name", t.name},
                      {"columns", cols},
                      {"primary_key", t.primary_key},
                      {"foreign_keys", fks},
                      {"categorical_values", values},
                      {"approx_row_count", row_count}});
  }
  json filter = json::array();
  for (auto tc : snapshot.scan_options.categorical_type_filter) filter.push_back(to_string(tc));
  json options = {
      {"categorical_max_distinct", snapshot.scan_options.categorical_max_distinct},
      {"categorical_type_filter", filter},
      {"max_tables", snapshot.scan_options.max_tables ? json(*snapshot.scan_options.max_tables)
                                                      : json(nullptr)},
      {"query_budget_ms", snapshot.scan_options.query_budget.count()}};
  return {{"database_name", snapshot.database_name},
          {"scanned_at", snapshot.scanned_at},
          {"scan_options", options},
          {"tables", tables}};
}

SchemaSnapshot snapshot_from_json(const nlohmann::json& doc) {
  SchemaSnapshot snap;
  snap.database_name = doc.at("database_name").get<std::string>();
  snap.scanned_at = doc.at("scanned_at").get<std::string>();
  const auto& opts = doc.at("scan_options");
  snap.scan_options.categorical_max_distinct = opts.at("categorical_max_distinct").get<std::int64_t>();
  snap.scan_options.categorical_type_filter.clear();
  for (const auto& tc : opts.at("categorical_type_filter")) {
    auto parsed = parse_type_class(tc.get<std::string>());
    if (!parsed) throw std::invalid_argument("unknown type class " + tc.get<std::string>());
    snap.scan_options.categorical_type_filter.insert(*parsed);
  }
  if (!opts.at("max_tables").is_null()) snap.scan_options.max_tables = opts.at("max_tables").get<std::int64_t>();
  snap.scan_options.query_budget = std::chrono::milliseconds(opts.value("query_budget_ms", 5000));
  for (const auto& t : doc.at("tables")) {
    TableInfo table;
    table.name = t.at("name").get<std::string>();
    for (const auto& c : t.at("columns")) {
      table.columns.push_back({c.at("name").get<std::string>(), c.at("declared_type").get<std::string>(),
                               c.at("nullable").get<bool>()});
    }
    table.primary_key = t.at("primary_key").get<std::vector<std::string>>();
    for (const auto& fk : t.at("foreign_keys")) {
      table.foreign_keys.push_back({fk.at("local_columns").get<std::vector<std::string>>(),
                                    fk.at("referenced_table").get<std::string>(),
                                    fk.at("referenced_columns").get<std::vector<std::string>>()});
    }
    for (const auto& [col, vs] : t.at("categorical_values").items()) {
      table.categorical_values[col] = vs.get<std::vector<std::string>>();
    }
    if (!t.at("approx_row_count").is_null()) table.approx_row_count = t.at("approx_row_count").get<std::int64_t>();
    snap.tables.push_back(std::move(table));
  }
  validate(snap);
  return snap;
}

}  // namespace nlq::schema
