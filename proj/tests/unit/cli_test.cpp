#include "abacus/cli.hpp"
#include "abacus/util.hpp"

#include "support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sstream>

using abacus::testing::TempDir;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code = abacus::cli_main(args, out, err);
    return {code, out.str(), err.str()};
}

std::string path_str(const std::filesystem::path& p) { return p.string(); }

} // namespace

TEST(Cli, EvalWritesReportAndSummary) {
    TempDir dir;
    const auto eval = abacus::testing::fixtures_dir() / "eval";
    auto r = cli({"eval", "--format", "native", "--data", path_str(eval), "--mock", path_str(eval / "mock.json"),
                  "--databases", path_str(abacus::testing::data_dir()), "--out", path_str(dir / "report.json"),
                  "--transcripts", path_str(dir / "sessions")});
    ASSERT_EQ(r.code, 0) << r.err;
    auto report = nlohmann::json::parse(abacus::read_file(dir / "report.json"));
    EXPECT_DOUBLE_EQ(report["qex"].get<double>(), 0.8);
    EXPECT_DOUBLE_EQ(report["iex"].get<double>(), 0.5);
    EXPECT_EQ(report["config"]["format"], "native");
    EXPECT_TRUE(std::filesystem::exists(dir / "report.txt"));
    EXPECT_NE(r.out.find("80.0"), std::string::npos) << r.out;
    EXPECT_FALSE(std::filesystem::is_empty(dir / "sessions"));
}

TEST(Cli, UsageErrorsExitTwoAndNameTheFlag) {
    auto missing = cli({"eval", "--format", "native"});
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE((missing.out + missing.err).find("--data"), std::string::npos);

    auto bad_rounds = cli({"augment", "--pool", path_str(abacus::testing::data_dir() / "demos" / "default_pool.json"),
                           "--rounds", "-1"});
    EXPECT_EQ(bad_rounds.code, 2);
    EXPECT_NE((bad_rounds.out + bad_rounds.err).find("--rounds"), std::string::npos);

    EXPECT_EQ(cli({"frobnicate"}).code, 2);
    EXPECT_EQ(cli({}).code, 2);
}

TEST(Cli, UnknownFormatIsRuntimeFailure) {
    TempDir dir;
    const auto eval = abacus::testing::fixtures_dir() / "eval";
    auto r = cli({"eval", "--format", "spider9", "--data", path_str(eval), "--out", path_str(dir / "r.json")});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("spider9"), std::string::npos) << r.err;
    EXPECT_FALSE(std::filesystem::exists(dir / "r.json"));
}

TEST(Cli, AugmentZeroRoundsLeavesPoolAlone) {
    TempDir dir;
    const auto pool = dir / "pool.json";
    std::filesystem::copy_file(abacus::testing::data_dir() / "demos" / "default_pool.json", pool);
    const auto before = abacus::read_file(pool);
    auto r = cli({"augment", "--pool", path_str(pool), "--rounds", "0", "--databases",
                  path_str(abacus::testing::data_dir())});
    ASSERT_EQ(r.code, 0) << r.err;
    auto summary = nlohmann::json::parse(r.out);
    EXPECT_EQ(summary["accepted"], 0);
    EXPECT_EQ(abacus::read_file(pool), before);
}

TEST(Cli, IngestRegistersScripts) {
    TempDir dir;
    auto r = cli({"ingest", "--sql", "--data-dir", path_str(dir.path()), "--id", "two",
                  path_str(abacus::testing::fixtures_dir() / "two_table.sql")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "two: 2 tables\n");
    auto again = cli({"ingest", "--sql", "--data-dir", path_str(dir.path()), "--id", "two",
                      path_str(abacus::testing::fixtures_dir() / "two_table.sql")});
    EXPECT_EQ(again.code, 1);
    EXPECT_NE(again.err.find("duplicate_id"), std::string::npos) << again.err;
}
