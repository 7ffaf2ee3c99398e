#include "abacus/executor.hpp"
#include "abacus/util.hpp"

#include "oracles.hpp"
#include "result_support.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using abacus::ExecErrorKind;
using abacus::ExecutionResult;
using abacus::testing::TempDir;
using namespace abacus::testing::results;

namespace {

struct Fixture {
    TempDir dir;
    std::unique_ptr<abacus::Catalog> catalog = abacus::testing::fixture_catalog(dir.path());
    std::shared_ptr<const abacus::DatabaseEntry> cs = catalog->at("concert_singer");
};

} // namespace

TEST(Execute, CountOnFixture) {
    Fixture f;
    auto r = abacus::execute(*f.cs, "SELECT count(*) FROM singer");
    ASSERT_TRUE(r.ok()) << r.error->message;
    EXPECT_EQ(r.columns, (std::vector<std::string>{"count(*)"}));
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0], (abacus::Row{std::int64_t{5}}));
    EXPECT_FALSE(r.truncated);
}

TEST(Execute, SyntaxError) {
    Fixture f;
    auto r = abacus::execute(*f.cs, "SELEC 1");
    ASSERT_FALSE(r.ok());
    EXPECT_EQ(r.error->kind, ExecErrorKind::syntax);
}

TEST(Execute, SchemaError) {
    Fixture f;
    auto r = abacus::execute(*f.cs, "SELECT nope FROM singer");
    ASSERT_FALSE(r.ok());
    EXPECT_EQ(r.error->kind, ExecErrorKind::schema);
}

TEST(Execute, WritesRejectedAndTableIntact) {
    Fixture f;
    for (const char* stmt : {"DROP TABLE singer", "DELETE FROM singer", "INSERT INTO singer (name) VALUES ('x')",
                             "UPDATE singer SET age = 0", "PRAGMA writable_schema = 1", "CREATE TABLE t (x)",
                             "ATTACH DATABASE ':memory:' AS other"}) {
        auto r = abacus::execute(*f.cs, stmt);
        ASSERT_FALSE(r.ok()) << stmt;
        EXPECT_EQ(r.error->kind, ExecErrorKind::rejected) << stmt;
    }
    auto r = abacus::execute(*f.cs, "SELECT count(*) FROM singer");
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.rows[0][0], abacus::Value{std::int64_t{5}});
}

TEST(Execute, FileDigestUnchanged) {
    Fixture f;
    auto before = abacus::sha256_file_hex(f.cs->storage_ref);
    for (const char* stmt : {"SELECT * FROM concert", "DROP TABLE singer", "SELEC", "DELETE FROM stadium",
                             "SELECT name FROM singer ORDER BY age", "VACUUM", "PRAGMA user_version = 7"}) {
        abacus::execute(*f.cs, stmt);
    }
    EXPECT_EQ(abacus::sha256_file_hex(f.cs->storage_ref), before);
}

TEST(Execute, RowCapTruncates) {
    Fixture f;
    abacus::ExecuteOptions opts;
    opts.row_cap = 2;
    auto r = abacus::execute(*f.cs, "SELECT name FROM singer", opts);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.rows.size(), 2u);
    EXPECT_TRUE(r.truncated);
}

TEST(Execute, TimeCap) {
    Fixture f;
    abacus::ExecuteOptions opts;
    opts.time_cap = std::chrono::milliseconds(50);
    auto r = abacus::execute(*f.cs,
                             "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT max(x) FROM c",
                             opts);
    ASSERT_FALSE(r.ok());
    EXPECT_EQ(r.error->kind, ExecErrorKind::timeout);
}

TEST(Execute, JsonRoundTrip) {
    Fixture f;
    auto r = abacus::execute(*f.cs, "SELECT name, age, NULL, 1.5 FROM singer WHERE age > 40");
    auto back = abacus::execution_result_from_json(abacus::to_json(r));
    EXPECT_EQ(back.columns, r.columns);
    EXPECT_EQ(back.rows, r.rows);
    auto err = abacus::execute(*f.cs, "SELEC");
    auto err_back = abacus::execution_result_from_json(abacus::to_json(err));
    EXPECT_EQ(err_back.error, err.error);
}

TEST(Compare, SpecExamples) {
    auto a = rows_result({{std::int64_t{1}}, {std::int64_t{2}}});
    auto b = rows_result({{std::int64_t{2}}, {std::int64_t{1}}});
    EXPECT_TRUE(abacus::compare_results(a, b, {false}));
    EXPECT_FALSE(abacus::compare_results(a, b, {true}));
    auto p = rows_result({{0.3333333}});
    auto g = rows_result({{1.0 / 3.0}});
    EXPECT_TRUE(abacus::compare_results(p, g, {false, 1e-6}));
}

TEST(Compare, NullsDuplicatesAndErrors) {
    auto nulls = rows_result({{abacus::Null{}}});
    EXPECT_TRUE(abacus::compare_results(nulls, nulls, {}));
    EXPECT_FALSE(abacus::compare_results(nulls, rows_result({{std::int64_t{0}}}), {}));
    auto dup = rows_result({{std::int64_t{1}}, {std::int64_t{1}}});
    EXPECT_FALSE(abacus::compare_results(dup, rows_result({{std::int64_t{1}}}), {}));
    ExecutionResult failed;
    failed.error = abacus::ExecError{"boom", ExecErrorKind::runtime};
    EXPECT_FALSE(abacus::compare_results(failed, failed, {}));
}

TEST(Compare, PolicyFromGold) {
    EXPECT_TRUE(abacus::ComparisonPolicy::for_gold("SELECT a FROM t ORDER BY a").ordered);
    EXPECT_FALSE(abacus::ComparisonPolicy::for_gold("SELECT a FROM (SELECT a FROM t ORDER BY a)").ordered);
}

TEST(Compare, RandomPairsMatchOracle) {
    std::mt19937 rng(2024);
    int agreements = 0, equal_pairs = 0;
    for (int round = 0; round < 200; ++round) {
        auto [a_rows, b_rows] = random_rows_pair(rng);
        auto a = rows_result(a_rows), b = rows_result(b_rows);
        bool expected = oracle::multiset_equal(to_oracle(a_rows), to_oracle(b_rows), 1e-6);
        bool got = abacus::compare_results(a, b, {false, 1e-6});
        ASSERT_EQ(got, expected) << "round " << round;
        ASSERT_EQ(abacus::compare_results(b, a, {false, 1e-6}), got) << "symmetry, round " << round;
        bool expected_seq = oracle::sequence_equal(to_oracle(a_rows), to_oracle(b_rows), 1e-6);
        ASSERT_EQ(abacus::compare_results(a, b, {true, 1e-6}), expected_seq) << "ordered, round " << round;
        ++agreements;
        equal_pairs += expected ? 1 : 0;
    }
    EXPECT_EQ(agreements, 200);
    // the generator has to exercise both outcomes to mean anything
    EXPECT_GT(equal_pairs, 20);
    EXPECT_LT(equal_pairs, 180);
}
