#include "fixtures.hpp"

#include <sqlite3.h>

#include <atomic>
#include <stdexcept>
#include <unistd.h>

#include "nlq/util/files.hpp"

#ifndef NLQ_SOURCE_DIR
#error "NLQ_SOURCE_DIR must be defined"
#endif

namespace nlq::testing {

std::filesystem::path source_dir() { return NLQ_SOURCE_DIR; }

std::filesystem::path make_temp_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("nlq-" + name + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void run_script(const std::filesystem::path& db_file, const std::string& script) {
  sqlite3* db = nullptr;
  if (sqlite3_open(db_file.c_str(), &db) != SQLITE_OK) {
    std::string msg = sqlite3_errmsg(db);
    sqlite3_close(db);
    throw std::runtime_error("cannot create fixture: " + msg);
  }
  char* err = nullptr;
  if (sqlite3_exec(db, script.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown";
    sqlite3_free(err);
    sqlite3_close(db);
    throw std::runtime_error("fixture script failed: " + msg);
  }
  sqlite3_close(db);
}

std::string shop_sql() { return util::read_file(source_dir() / "data/fixtures/shop.sql"); }

std::filesystem::path make_shop_db(const std::filesystem::path& dir) {
  auto path = dir / "shop.sqlite";
  std::filesystem::remove(path);
  run_script(path, shop_sql());
  return path;
}

db::ConnectionProfile profile_for(const std::filesystem::path& db_file, const std::string& name) {
  return db::ConnectionProfile{name, db::ConnectionKind::kEmbeddedFile, db_file.string(),
                               db::kDefaultRowCap};
}

}  // namespace nlq::testing
