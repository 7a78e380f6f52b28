#pragma once

#include <filesystem>
#include <string>

#include "nlq/db/connection.hpp"

namespace nlq::testing {

std::filesystem::path source_dir();

// Fresh, empty directory under the system temp dir.
std::filesystem::path make_temp_dir(const std::string& name);

// Creates (or extends) a database file by running `script` with a writable
// connection. Fixture setup only; the library itself never writes.
void run_script(const std::filesystem::path& db_file, const std::string& script);

std::string shop_sql();

// Builds the shop fixture at dir/shop.sqlite.
std::filesystem::path make_shop_db(const std::filesystem::path& dir);

db::ConnectionProfile profile_for(const std::filesystem::path& db_file,
                                  const std::string& name = "shop");

}  // namespace nlq::testing
