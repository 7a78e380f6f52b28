#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <thread>

#include "fixtures.hpp"
#include "nlq/db/connection.hpp"

namespace nlq::db {
namespace {

class DbConnectorTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = nlq::testing::make_temp_dir("db");
    shop_ = nlq::testing::make_shop_db(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::filesystem::path dir_;
  std::filesystem::path shop_;
};

TEST_F(DbConnectorTest, ConnectsToFixtureAndSelectsOne) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  ASSERT_NE(conn, nullptr);
  auto r = conn->execute("SELECT 1 AS x");
  ASSERT_TRUE(r.has_value());
  ASSERT_EQ(r->columns.size(), 1u);
  EXPECT_EQ(r->columns[0].name, "x");
  ASSERT_EQ(r->rows.size(), 1u);
  EXPECT_EQ(std::get<std::int64_t>(r->rows[0][0]), 1);
  EXPECT_FALSE(r->truncated);
}

TEST_F(DbConnectorTest, MissingFileIsConnectFailure) {
  EXPECT_THROW(connect(nlq::testing::profile_for(dir_ / "nope.sqlite")), ConnectFailure);
}

TEST_F(DbConnectorTest, NonDatabaseFileIsConnectFailure) {
  auto junk = dir_ / "junk.sqlite";
  nlq::testing::run_script(dir_ / "unused.sqlite", "");
  {
    std::FILE* f = std::fopen(junk.c_str(), "w");
    std::fputs("this is not a database file at all, just some text padding it out", f);
    std::fclose(f);
  }
  EXPECT_THROW(connect(nlq::testing::profile_for(junk)), ConnectFailure);
}

TEST_F(DbConnectorTest, NetworkKindIsAnExtensionPoint) {
  ConnectionProfile p{"remote", ConnectionKind::kNetwork, "presto://host:8080", 1000};
  EXPECT_THROW(connect(p), ConnectFailure);
}

TEST_F(DbConnectorTest, MalformedKeywordFailsAtPrepare) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  auto r = conn->execute("SELEC 1");
  ASSERT_FALSE(r.has_value());
  EXPECT_EQ(r.error().phase, ExecPhase::kPrepare);
  EXPECT_FALSE(r.error().message.empty());
  EXPECT_EQ(r.error().sql, "SELEC 1");
}

TEST_F(DbConnectorTest, RowCapTruncatesThreeCustomersToTwo) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  auto all = conn->execute("SELECT COUNT(*) FROM customer");
  ASSERT_TRUE(all.has_value());
  ASSERT_EQ(std::get<std::int64_t>(all->rows[0][0]), 3);

  auto r = conn->execute("SELECT id FROM customer", 2);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(r->rows.size(), 2u);
  EXPECT_TRUE(r->truncated);

  auto exact = conn->execute("SELECT id FROM customer", 3);
  ASSERT_TRUE(exact.has_value());
  EXPECT_EQ(exact->rows.size(), 3u);
  EXPECT_FALSE(exact->truncated);
}

TEST_F(DbConnectorTest, RowCapPropertyHoldsForEveryCap) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  for (std::int64_t cap = 1; cap <= 8; ++cap) {
    auto r = conn->execute("SELECT * FROM orders", cap);
    ASSERT_TRUE(r.has_value());
    EXPECT_LE(static_cast<std::int64_t>(r->rows.size()), cap);
    EXPECT_EQ(r->truncated, cap < 6) << "cap=" << cap;
    for (const auto& row : r->rows) EXPECT_EQ(row.size(), r->columns.size());
  }
}

TEST_F(DbConnectorTest, CellsPreserveEngineValues) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  auto r = conn->execute("SELECT 7, 2.5, 'txt', NULL, x'00ff'");
  ASSERT_TRUE(r.has_value());
  const auto& row = r->rows.at(0);
  EXPECT_EQ(std::get<std::int64_t>(row[0]), 7);
  EXPECT_DOUBLE_EQ(std::get<double>(row[1]), 2.5);
  EXPECT_EQ(std::get<std::string>(row[2]), "txt");
  EXPECT_TRUE(std::holds_alternative<std::monostate>(row[3]));
  EXPECT_EQ(std::get<BlobHex>(row[4]).hex, "00ff");
}

TEST_F(DbConnectorTest, RuntimeFailureIsExecutePhase) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  // Prepares fine; fails while stepping.
  auto r = conn->execute("SELECT abs(-9223372036854775807 - 1)");
  ASSERT_FALSE(r.has_value());
  EXPECT_EQ(r.error().phase, ExecPhase::kExecute);
}

TEST_F(DbConnectorTest, RefusesWritesAndMultipleStatements) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  auto del = conn->execute("DELETE FROM orders");
  ASSERT_FALSE(del.has_value());
  auto multi = conn->execute("SELECT 1; SELECT 2");
  ASSERT_FALSE(multi.has_value());
  EXPECT_EQ(multi.error().phase, ExecPhase::kPrepare);
  auto count = conn->execute("SELECT COUNT(*) FROM orders");
  EXPECT_EQ(std::get<std::int64_t>(count->rows[0][0]), 6);
  EXPECT_TRUE(conn->execute("SELECT 1;  -- trailing comment").has_value());
}

TEST_F(DbConnectorTest, DeadlineInterruptsLongQueries) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  conn->set_deadline(std::chrono::steady_clock::now() + std::chrono::milliseconds(50));
  auto r = conn->execute(
      "WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n) SELECT COUNT(*) FROM n");
  ASSERT_FALSE(r.has_value());
  EXPECT_EQ(r.error().phase, ExecPhase::kExecute);
  EXPECT_EQ(r.error().message, kInterruptedMessage);
  conn->set_deadline(std::nullopt);
  EXPECT_TRUE(conn->execute("SELECT 1").has_value());
}

TEST_F(DbConnectorTest, CatalogListsUserTablesAndForeignKey) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  auto cat = conn->catalog();
  ASSERT_TRUE(cat.has_value());
  EXPECT_EQ(cat->tables, (std::vector<std::string>{"customer", "orders", "product"}));
  ASSERT_EQ(cat->foreign_keys.size(), 1u);
  const auto& fk = cat->foreign_keys[0];
  EXPECT_EQ(fk.table, "orders");
  EXPECT_EQ(fk.from_column, "customer_id");
  EXPECT_EQ(fk.referenced_table, "customer");
  EXPECT_EQ(fk.referenced_column, "id");
  auto pk = std::find_if(cat->columns.begin(), cat->columns.end(),
                         [](const auto& c) { return c.table == "customer" && c.name == "id"; });
  ASSERT_NE(pk, cat->columns.end());
  EXPECT_EQ(pk->pk_position, 1);
}

TEST_F(DbConnectorTest, CatalogOfEmptyDatabaseIsEmpty) {
  auto empty = dir_ / "empty.sqlite";
  nlq::testing::run_script(empty, "CREATE TABLE t(x); DROP TABLE t;");
  auto conn = connect(nlq::testing::profile_for(empty, "empty"));
  auto cat = conn->catalog();
  ASSERT_TRUE(cat.has_value());
  EXPECT_TRUE(cat->tables.empty());
}

TEST_F(DbConnectorTest, CatalogSkipsInternalTables) {
  auto db = dir_ / "auto.sqlite";
  nlq::testing::run_script(db, "CREATE TABLE t(id INTEGER PRIMARY KEY AUTOINCREMENT, v TEXT);"
                               "INSERT INTO t(v) VALUES ('a');");
  auto conn = connect(nlq::testing::profile_for(db, "auto"));
  auto cat = conn->catalog();
  ASSERT_TRUE(cat.has_value());
  EXPECT_EQ(cat->tables, std::vector<std::string>{"t"});  // sqlite_sequence hidden
}

TEST_F(DbConnectorTest, RepeatedReadsAgreeAsMultisets) {
  auto conn = connect(nlq::testing::profile_for(shop_));
  auto a = conn->execute("SELECT status, quantity FROM orders");
  auto b = conn->execute("SELECT status, quantity FROM orders");
  ASSERT_TRUE(a && b);
  auto sa = a->rows, sb = b->rows;
  auto less = [](const auto& x, const auto& y) { return x < y; };
  std::sort(sa.begin(), sa.end(), less);
  std::sort(sb.begin(), sb.end(), less);
  EXPECT_EQ(sa, sb);
}

TEST_F(DbConnectorTest, IndependentConnectionsReadConcurrently) {
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      auto conn = connect(nlq::testing::profile_for(shop_));
      for (int i = 0; i < 50; ++i) {
        auto r = conn->execute("SELECT COUNT(*) FROM orders");
        if (r && std::get<std::int64_t>(r->rows[0][0]) == 6) ++ok;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 200);
}

}  // namespace
}  // namespace nlq::db
