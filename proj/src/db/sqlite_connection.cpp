#include <sqlite3.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "nlq/db/connection.hpp"
#include "nlq/util/hash.hpp"

namespace nlq::db {

const char* to_string(ConnectionKind kind) {
  switch (kind) {
    case ConnectionKind::kEmbeddedFile: return "embedded-file";
    case ConnectionKind::kNetwork: return "network";
  }
  return "?";
}

std::optional<ConnectionKind> parse_connection_kind(std::string_view text) {
  if (text == "embedded-file") return ConnectionKind::kEmbeddedFile;
  if (text == "network") return ConnectionKind::kNetwork;
  return std::nullopt;
}

const char* to_string(ExecPhase phase) {
  return phase == ExecPhase::kPrepare ? "prepare" : "execute";
}

std::string cell_to_text(const Cell& cell) {
  struct Visitor {
    std::string operator()(std::monostate) const { return "NULL"; }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(double v) const {
      std::ostringstream ss;
      ss.precision(15);
      ss << v;
      return ss.str();
    }
    std::string operator()(const std::string& v) const { return v; }
    std::string operator()(const BlobHex& v) const { return "x'" + v.hex + "'"; }
  };
  return std::visit(Visitor{}, cell);
}

namespace {

struct StmtDeleter {
  void operator()(sqlite3_stmt* s) const { sqlite3_finalize(s); }
};
using StmtPtr = std::unique_ptr<sqlite3_stmt, StmtDeleter>;

bool only_trivia(const char* tail) {
  // The engine already skipped leading whitespace/comments when preparing
  // the tail; a null statement from the tail means nothing executable is left.
  return tail == nullptr || *tail == '\0';
}

class SqliteConnection final : public Connection {
 public:
  explicit SqliteConnection(ConnectionProfile profile) : profile_(std::move(profile)) {
    if (!std::filesystem::exists(profile_.location)) {
      throw ConnectFailure("database file not found: " + profile_.location);
    }
    int flags = SQLITE_OPEN_READONLY | SQLITE_OPEN_NOMUTEX;
    int rc = sqlite3_open_v2(profile_.location.c_str(), &db_, flags, nullptr);
    if (rc != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : sqlite3_errstr(rc);
      sqlite3_close(db_);
      db_ = nullptr;
      throw ConnectFailure(msg);
    }
    sqlite3_progress_handler(db_, 1000, &SqliteConnection::on_progress, this);
    // Surfaces a corrupt or non-database file at connect time.
    auto probe = execute("SELECT count(*) FROM sqlite_master", 1);
    if (!probe) {
      std::string msg = probe.error().message;
      sqlite3_close(db_);
      db_ = nullptr;
      throw ConnectFailure(msg);
    }
  }

  ~SqliteConnection() override {
    if (db_) sqlite3_close(db_);
  }

  SqliteConnection(const SqliteConnection&) = delete;
  SqliteConnection& operator=(const SqliteConnection&) = delete;

  const ConnectionProfile& profile() const override { return profile_; }

  void set_deadline(std::optional<std::chrono::steady_clock::time_point> deadline) override {
    deadline_ = deadline;
  }

  ExecResult execute(const std::string& sql, std::optional<std::int64_t> row_cap) override {
    std::int64_t cap = row_cap.value_or(profile_.default_row_cap);
    if (cap < 1) cap = 1;

    sqlite3_stmt* raw = nullptr;
    const char* tail = nullptr;
    int rc = sqlite3_prepare_v2(db_, sql.c_str(), static_cast<int>(sql.size()), &raw, &tail);
    StmtPtr stmt(raw);
    if (rc != SQLITE_OK) return fail(ExecPhase::kPrepare, sql);
    if (!stmt) return unexpected(ExecError{ExecPhase::kPrepare, "empty statement", sql});
    if (!only_trivia(tail)) {
      sqlite3_stmt* rest = nullptr;
      const char* rest_tail = nullptr;
      int rrc = sqlite3_prepare_v2(db_, tail, -1, &rest, &rest_tail);
      StmtPtr rest_guard(rest);
      if (rrc != SQLITE_OK || rest != nullptr) {
        return unexpected(
            ExecError{ExecPhase::kPrepare, "multiple statements are not allowed", sql});
      }
    }
    if (!sqlite3_stmt_readonly(stmt.get())) {
      return unexpected(
          ExecError{ExecPhase::kPrepare, "statement would modify the database", sql});
    }

    if (deadline_ && std::chrono::steady_clock::now() > *deadline_) {
      return unexpected(ExecError{ExecPhase::kExecute, kInterruptedMessage, sql});
    }

    ResultTable table;
    const int ncols = sqlite3_column_count(stmt.get());
    table.columns.reserve(static_cast<std::size_t>(ncols));
    for (int i = 0; i < ncols; ++i) {
      const char* name = sqlite3_column_name(stmt.get(), i);
      const char* decl = sqlite3_column_decltype(stmt.get(), i);
      table.columns.push_back({name ? name : "", decl ? decl : ""});
    }

    while (true) {
      rc = sqlite3_step(stmt.get());
      if (rc == SQLITE_DONE) break;
      if (rc != SQLITE_ROW) return fail(ExecPhase::kExecute, sql);
      if (static_cast<std::int64_t>(table.rows.size()) >= cap) {
        table.truncated = true;
        break;
      }
      std::vector<Cell> row;
      row.reserve(static_cast<std::size_t>(ncols));
      for (int i = 0; i < ncols; ++i) row.push_back(read_cell(stmt.get(), i));
      table.rows.push_back(std::move(row));
    }
    return table;
  }

  Expected<Catalog, ExecError> catalog() override {
    Catalog cat;
    auto tables = execute(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' "
        "ESCAPE '\\' ORDER BY name",
        std::numeric_limits<std::int64_t>::max());
    if (!tables) return unexpected(tables.error());
    for (const auto& row : tables->rows) {
      cat.tables.push_back(std::get<std::string>(row[0]));
    }
    for (const auto& t : cat.tables) {
      auto cols = execute("SELECT name, type, \"notnull\", pk FROM pragma_table_info(" +
                              quote_literal(t) + ") ORDER BY cid",
                          std::numeric_limits<std::int64_t>::max());
      if (!cols) return unexpected(cols.error());
      for (const auto& r : cols->rows) {
        CatalogColumn c;
        c.table = t;
        c.name = cell_to_text(r[0]);
        c.declared_type = std::holds_alternative<std::string>(r[1]) ? std::get<std::string>(r[1]) : "";
        c.not_null = std::get<std::int64_t>(r[2]) != 0;
        c.pk_position = static_cast<int>(std::get<std::int64_t>(r[3]));
        cat.columns.push_back(std::move(c));
      }
      auto fks = execute("SELECT id, seq, \"table\", \"from\", \"to\" FROM pragma_foreign_key_list(" +
                             quote_literal(t) + ") ORDER BY id, seq",
                         std::numeric_limits<std::int64_t>::max());
      if (!fks) return unexpected(fks.error());
      for (const auto& r : fks->rows) {
        CatalogForeignKey fk;
        fk.table = t;
        fk.constraint_id = static_cast<int>(std::get<std::int64_t>(r[0]));
        fk.seq = static_cast<int>(std::get<std::int64_t>(r[1]));
        fk.referenced_table = cell_to_text(r[2]);
        fk.from_column = cell_to_text(r[3]);
        fk.referenced_column =
            std::holds_alternative<std::string>(r[4]) ? std::get<std::string>(r[4]) : "";
        cat.foreign_keys.push_back(std::move(fk));
      }
    }
    return cat;
  }

 private:
  static int on_progress(void* self) {
    auto* conn = static_cast<SqliteConnection*>(self);
    if (conn->deadline_ && std::chrono::steady_clock::now() > *conn->deadline_) {
      conn->interrupted_ = true;
      return 1;
    }
    return 0;
  }

  static std::string quote_literal(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
      if (c == '\'') out.push_back('\'');
      out.push_back(c);
    }
    out.push_back('\'');
    return out;
  }

  static Cell read_cell(sqlite3_stmt* stmt, int i) {
    switch (sqlite3_column_type(stmt, i)) {
      case SQLITE_INTEGER: return static_cast<std::int64_t>(sqlite3_column_int64(stmt, i));
      case SQLITE_FLOAT: return sqlite3_column_double(stmt, i);
      case SQLITE_TEXT: {
        const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt, i));
        return std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt, i)));
      }
      case SQLITE_BLOB: {
        const auto* p = static_cast<const char*>(sqlite3_column_blob(stmt, i));
        auto n = static_cast<std::size_t>(sqlite3_column_bytes(stmt, i));
        return BlobHex{util::to_hex(std::string_view(p ? p : "", p ? n : 0))};
      }
      default: return std::monostate{};
    }
  }

  Unexpected<ExecError> fail(ExecPhase phase, const std::string& sql) {
    std::string msg;
    if (interrupted_) {
      msg = kInterruptedMessage;
      interrupted_ = false;
      phase = ExecPhase::kExecute;
    } else {
      msg = sqlite3_errmsg(db_);
    }
    if (msg.empty()) msg = "unknown engine error";
    return unexpected(ExecError{phase, std::move(msg), sql});
  }

  ConnectionProfile profile_;
  sqlite3* db_ = nullptr;
  std::optional<std::chrono::steady_clock::time_point> deadline_;
  bool interrupted_ = false;
};

}  // namespace

std::unique_ptr<Connection> connect(const ConnectionProfile& profile) {
  if (profile.default_row_cap < 1) throw ConnectFailure("default_row_cap must be >= 1");
  switch (profile.kind) {
    case ConnectionKind::kEmbeddedFile:
      return std::make_unique<SqliteConnection>(profile);
    case ConnectionKind::kNetwork:
      throw ConnectFailure("no network connector is available for '" + profile.name + "'");
  }
  throw ConnectFailure("unknown connection kind");
}

}  // namespace nlq::db
