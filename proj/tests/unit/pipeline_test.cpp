#include "abacus/error.hpp"
#include "abacus/pipeline.hpp"
#include "abacus/util.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using abacus::Errc;
using abacus::PipelineDeps;
using abacus::SessionState;
using abacus::testing::sql_reply;
using abacus::testing::TempDir;
using abacus::testing::throws_code;

namespace llm = abacus::llm;

namespace {

struct World {
    TempDir dir;
    std::unique_ptr<abacus::Catalog> catalog = abacus::testing::fixture_catalog(dir / "catalog");
    abacus::DemoPool pool =
        abacus::load_pool(abacus::testing::data_dir() / "demos" / "default_pool.json", catalog.get());
    abacus::Bm25TableScorer scorer;

    PipelineDeps deps(llm::Client& client) const {
        PipelineDeps d;
        d.catalog = catalog.get();
        d.pool = &pool;
        d.client = &client;
        d.scorer = &scorer;
        return d;
    }
};

std::vector<std::string> repeat(const std::string& s, int n) { return std::vector<std::string>(n, s); }

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

abacus::Demonstration one_turn(const std::string& id, const std::string& q, const std::string& s) {
    return abacus::Demonstration::make(id, "concert_singer", {{q, s}});
}

// With the default retrieval config every first hop branches four ways, and a
// STOP rewriter ends all four.
const int kRewriteCalls = 4;

} // namespace

TEST(BuildPrompt, MessageCounts) {
    SessionState s;
    auto bare = abacus::build_prompt(s, "CREATE TABLE t (x INT);", {}, "q");
    ASSERT_EQ(bare.messages.size(), 2u);
    EXPECT_EQ(bare.messages[0].role, llm::Role::system);
    EXPECT_EQ(bare.messages[1].role, llm::Role::user);

    std::vector<abacus::Demonstration> demos = {one_turn("a", "q1", "SELECT 1"), one_turn("b", "q2", "SELECT 2"),
                                                one_turn("c", "q3", "SELECT 3")};
    auto p = abacus::build_prompt(s, "CREATE TABLE t (x INT);", demos, "q");
    ASSERT_EQ(p.messages.size(), 8u);
    int systems = 0;
    for (const auto& m : p.messages) systems += m.role == llm::Role::system ? 1 : 0;
    EXPECT_EQ(systems, 1);
    EXPECT_EQ(p.messages[1].content, "q1");
    EXPECT_EQ(p.messages[2].role, llm::Role::assistant);
    EXPECT_EQ(p.messages[2].content, "```sql\nSELECT 1\n```");
    EXPECT_NE(p.messages[7].content.find("CREATE TABLE t"), std::string::npos);

    auto again = abacus::build_prompt(s, "CREATE TABLE t (x INT);", demos, "q");
    EXPECT_EQ(llm::render_messages(again.messages), llm::render_messages(p.messages));
    EXPECT_TRUE(throws_code(Errc::invalid_argument, [&] { abacus::build_prompt(s, "", {}, "q"); }));
}

TEST(BuildPrompt, HistoryInTurnOrder) {
    SessionState s;
    for (int i = 1; i <= 2; ++i) {
        abacus::Turn t;
        t.question = "question " + std::to_string(i);
        t.final_sql = "SELECT " + std::to_string(i);
        s.turns.push_back(t);
    }
    auto p = abacus::build_prompt(s, "CREATE TABLE t (x INT);", {}, "question 3");
    const auto& user = p.messages.back().content;
    auto q1 = user.find("Q1: question 1\nSQL1: SELECT 1\n");
    auto q2 = user.find("Q2: question 2\nSQL2: SELECT 2\n");
    ASSERT_NE(q1, std::string::npos) << user;
    ASSERT_NE(q2, std::string::npos) << user;
    EXPECT_LT(q1, q2);
    EXPECT_LT(user.find("CREATE TABLE t"), q1);
}

TEST(ExtractSql, Examples) {
    EXPECT_EQ(abacus::extract_sql("```sql\nSELECT 1\n```"), "SELECT 1");
    EXPECT_EQ(abacus::extract_sql("Sure! SELECT a FROM t"), "SELECT a FROM t");
    EXPECT_TRUE(throws_code(Errc::no_sql_found, [] { abacus::extract_sql("I cannot answer"); }));
    EXPECT_EQ(abacus::extract_sql("Here:\n```\nSELECT a FROM t;\n```\nThis lists a."), "SELECT a FROM t");
    EXPECT_EQ(abacus::extract_sql("Try SELECT a FROM t WHERE b = 'x;y'; then stop"), "SELECT a FROM t WHERE b = 'x;y'");
    EXPECT_EQ(abacus::extract_sql("with x as (select 1) select * from x\n\nExplanation"),
              "with x as (select 1) select * from x");
    EXPECT_EQ(abacus::extract_sql("```SELECT 2```"), "SELECT 2");
}

TEST(PreSql, FkNeighboursAdded) {
    World w;
    auto mock = llm::ScriptedMock::from_strings({sql_reply("SELECT name FROM singer")});
    auto deps = w.deps(mock);
    auto entry = w.catalog->at("concert_singer");
    auto out = abacus::pre_sql_filter({}, *entry, {}, "names?", mock, deps);
    EXPECT_FALSE(out.fallback);
    ASSERT_TRUE(out.filtered_tables);
    EXPECT_EQ(*out.filtered_tables, (abacus::sql::TableRefSet{"singer", "concert"}));
    EXPECT_EQ(out.schema_text, abacus::serialize_schema(*entry, std::vector<std::string>{"singer", "concert"}));
    EXPECT_EQ(out.pre_sql, "SELECT name FROM singer");
    // the draft pass sees the full schema
    EXPECT_NE(mock.calls()[0].messages.back().content.find("CREATE TABLE stadium"), std::string::npos);
}

TEST(PreSql, FallbackAndFullCoverage) {
    World w;
    auto entry = w.catalog->at("concert_singer");
    auto full = abacus::serialize_schema(*entry);
    for (const char* reply : {"```sql\nSELECT 1\n```", "no sql at all", "```sql\nSELECT a FROM nope\n```"}) {
        auto mock = llm::ScriptedMock::from_strings({reply});
        auto out = abacus::pre_sql_filter({}, *entry, {}, "q", mock, w.deps(mock));
        EXPECT_TRUE(out.fallback) << reply;
        EXPECT_EQ(out.schema_text, full) << reply;
    }
    auto mock = llm::ScriptedMock::from_strings(
        {sql_reply("SELECT * FROM concert JOIN singer ON 1 JOIN stadium ON 1")});
    auto out = abacus::pre_sql_filter({}, *entry, {}, "q", mock, w.deps(mock));
    EXPECT_FALSE(out.fallback);
    EXPECT_EQ(out.schema_text, full);
}

TEST(PreSql, LlmFailurePropagates) {
    World w;
    auto mock = llm::ScriptedMock::from_strings({});
    EXPECT_TRUE(throws_code(Errc::mock_exhausted, [&] {
        abacus::pre_sql_filter({}, *w.catalog->at("pets"), {}, "q", mock, w.deps(mock));
    }));
}

TEST(SelfDebug, ValidSqlNoIterations) {
    World w;
    auto mock = llm::ScriptedMock::from_strings({});
    auto entry = w.catalog->at("concert_singer");
    auto out = abacus::self_debug("SELECT count(*) FROM singer", *entry, "q", "schema", mock, w.deps(mock));
    EXPECT_TRUE(out.trace.empty());
    ASSERT_TRUE(out.result.ok());
    EXPECT_EQ(out.result.rows[0][0], abacus::Value{std::int64_t{5}});
    EXPECT_EQ(mock.call_count(), 0u);
}

TEST(SelfDebug, CorrectedOnFirstCall) {
    World w;
    auto mock = llm::ScriptedMock::from_strings({sql_reply("SELECT count(*) FROM singer")});
    auto entry = w.catalog->at("concert_singer");
    auto out = abacus::self_debug("SELECT count(*) FROM singers", *entry, "How many singers?", "SCHEMA-TEXT", mock,
                                  w.deps(mock));
    ASSERT_EQ(out.trace.size(), 1u);
    EXPECT_EQ(out.trace[0].sql, "SELECT count(*) FROM singers");
    EXPECT_NE(out.trace[0].error.find("no such table"), std::string::npos) << out.trace[0].error;
    EXPECT_TRUE(out.result.ok());
    EXPECT_EQ(out.final_sql, "SELECT count(*) FROM singer");
    const auto& prompt = mock.calls()[0].messages.back().content;
    for (const char* part : {"no such table", "SCHEMA-TEXT", "How many singers?", "SELECT count(*) FROM singers"}) {
        EXPECT_NE(prompt.find(part), std::string::npos) << part;
    }
}

TEST(SelfDebug, ExhaustionKeepsLastError) {
    World w;
    auto mock = llm::ScriptedMock::from_strings(repeat(sql_reply("SELECT nope FROM singer"), 5));
    auto deps = w.deps(mock);
    deps.cfg.max_debug_iters = 3;
    auto out = abacus::self_debug("SELECT bad FROM singer", *w.catalog->at("concert_singer"), "q", "s", mock, deps);
    EXPECT_EQ(out.trace.size(), 3u);
    EXPECT_EQ(mock.call_count(), 3u);
    ASSERT_FALSE(out.result.ok());
    EXPECT_EQ(out.final_sql, "SELECT nope FROM singer");
    EXPECT_FALSE(out.error.has_value());
}

TEST(SelfDebug, DisabledRunsOnce) {
    World w;
    auto mock = llm::ScriptedMock::from_strings({});
    auto deps = w.deps(mock);
    deps.cfg.enable_self_debug = false;
    auto out = abacus::self_debug("SELECT bad FROM singer", *w.catalog->at("concert_singer"), "q", "s", mock, deps);
    EXPECT_TRUE(out.trace.empty());
    EXPECT_FALSE(out.result.ok());
}

TEST(SelfDebug, LlmFailureRecorded) {
    World w;
    auto mock = llm::ScriptedMock::from_strings({});
    auto out = abacus::self_debug("SELECT bad FROM singer", *w.catalog->at("concert_singer"), "q", "s", mock,
                                  w.deps(mock));
    ASSERT_TRUE(out.error.has_value());
    EXPECT_EQ(out.error->stage, "debug");
    EXPECT_FALSE(out.result.ok());
}

TEST(ProcessTurn, EndToEndAndPinning) {
    World w;
    auto mock = llm::ScriptedMock::from_strings(concat(
        repeat("<DONE>", kRewriteCalls),
        {sql_reply("SELECT name FROM singer"), sql_reply("SELECT count(*) FROM singer"),
         sql_reply("SELECT name FROM singer"), sql_reply("SELECT name FROM singer ORDER BY age DESC LIMIT 1")}));
    auto deps = w.deps(mock);
    SessionState session;
    std::vector<std::string> stages;
    abacus::TurnObserver obs;
    obs.on_stage = [&](const std::string& stage, const nlohmann::json&) { stages.push_back(stage); };
    std::string streamed;
    obs.on_token = [&](std::string_view t) { streamed += t; };

    auto t1 = abacus::process_turn(session, "How many singers are there?", deps, obs);
    EXPECT_FALSE(t1.error.has_value());
    EXPECT_EQ(t1.db_id, "concert_singer");
    EXPECT_EQ(session.db_id, "concert_singer");
    EXPECT_EQ(t1.final_sql, "SELECT count(*) FROM singer");
    ASSERT_TRUE(t1.result.ok());
    EXPECT_EQ(t1.result.rows, (std::vector<abacus::Row>{{std::int64_t{5}}}));
    ASSERT_TRUE(t1.retrieval.has_value());
    EXPECT_EQ(t1.retrieval->databases[0].db_id, "concert_singer");
    EXPECT_EQ(t1.demo_ids.size(), 3u);
    EXPECT_EQ(t1.pre_sql, "SELECT name FROM singer");
    EXPECT_EQ(streamed, sql_reply("SELECT count(*) FROM singer"));
    EXPECT_EQ(stages, (std::vector<std::string>{"retrieval", "demos", "pre-sql", "generation", "debug", "execution"}));
    EXPECT_EQ(mock.call_count(), static_cast<std::size_t>(kRewriteCalls + 2));

    auto t2 = abacus::process_turn(session, "Who is the oldest?", deps);
    EXPECT_FALSE(t2.retrieval.has_value());
    EXPECT_EQ(mock.call_count(), static_cast<std::size_t>(kRewriteCalls + 4));
    for (std::size_t i = kRewriteCalls + 2; i < mock.call_count(); ++i) {
        EXPECT_EQ(mock.calls()[i].messages.back().content.find("already been retrieved"), std::string::npos);
    }
    ASSERT_TRUE(t2.result.ok());
    EXPECT_EQ(t2.result.rows, (std::vector<abacus::Row>{{std::string("Joe Sharp")}}));
    EXPECT_EQ(session.turns.size(), 2u);
    // the generation prompt for turn 2 carries turn 1
    EXPECT_NE(mock.calls().back().messages.back().content.find("Q1: How many singers are there?\nSQL1: SELECT count(*) FROM singer"),
              std::string::npos);
}

TEST(ProcessTurn, AblationCallCounts) {
    World w;
    SessionState session;
    session.db_id = "concert_singer";
    session.turns.push_back({});
    session.turns.back().question = "earlier";
    session.turns.back().final_sql = "SELECT 1";

    auto without_pre = llm::ScriptedMock::from_strings({sql_reply("SELECT count(*) FROM singer")});
    auto deps = w.deps(without_pre);
    deps.cfg.enable_pre_sql = false;
    auto t = abacus::process_turn(session, "count singers", deps);
    EXPECT_EQ(without_pre.call_count(), 1u);
    EXPECT_FALSE(t.pre_sql.has_value());

    auto baseline = llm::ScriptedMock::from_strings({sql_reply("SELECT broken FROM singer")});
    deps = w.deps(baseline);
    deps.cfg.enable_pre_sql = false;
    deps.cfg.enable_self_debug = false;
    auto b = abacus::process_turn(session, "count singers", deps);
    EXPECT_EQ(baseline.call_count(), 1u);
    EXPECT_TRUE(b.debug_trace.empty());
    EXPECT_FALSE(b.result.ok());
}

TEST(ProcessTurn, SelfDebugBoundedBeyondGeneration) {
    World w;
    SessionState session;
    session.db_id = "pets";
    session.turns.push_back({});
    auto mock = llm::ScriptedMock::from_strings(repeat(sql_reply("SELECT nope FROM pets"), 10));
    auto deps = w.deps(mock);
    deps.cfg.enable_pre_sql = false;
    deps.cfg.max_debug_iters = 2;
    auto t = abacus::process_turn(session, "q", deps);
    EXPECT_EQ(mock.call_count(), 3u);
    EXPECT_EQ(t.debug_trace.size(), 2u);
}

TEST(ProcessTurn, GenerationWithoutSqlIsTurnError) {
    World w;
    SessionState session;
    session.db_id = "pets";
    session.turns.push_back({});
    auto mock = llm::ScriptedMock::from_strings({"I am not sure."});
    auto deps = w.deps(mock);
    deps.cfg.enable_pre_sql = false;
    std::vector<std::string> stages;
    abacus::TurnObserver obs;
    obs.on_stage = [&](const std::string& stage, const nlohmann::json&) { stages.push_back(stage); };
    auto t = abacus::process_turn(session, "q", deps, obs);
    ASSERT_TRUE(t.error.has_value());
    EXPECT_EQ(t.error->stage, "generation");
    EXPECT_EQ(t.error->code, "no_sql_found");
    EXPECT_FALSE(t.result.ok());
    EXPECT_EQ(session.turns.size(), 2u);
    EXPECT_FALSE(stages.empty());
}

TEST(ProcessTurn, TranscriptDeterministic) {
    auto run = [] {
        World w;
        abacus::SessionStore store(w.dir / "sessions", [] { return std::int64_t{0}; });
        auto session = store.create("s1", "u");
        auto mock = llm::ScriptedMock::from_strings(concat(
            repeat("<DONE>", kRewriteCalls),
            {sql_reply("SELECT name FROM singer"), sql_reply("SELECT count(*) FROM singers"),
             sql_reply("SELECT count(*) FROM singer")}));
        abacus::process_turn(session, "How many singers are there?", w.deps(mock), {}, &store);
        return store.transcript("s1");
    };
    auto a = run();
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, run());
}

TEST(TurnJson, RoundTrip) {
    abacus::Turn t;
    t.question = "q";
    t.db_id = "pets";
    t.pre_sql = "SELECT 1";
    t.filtered_tables = abacus::sql::TableRefSet{"pets"};
    t.final_sql = "SELECT 2";
    t.debug_trace = {{"SELECT x", "no such column: x"}};
    t.result.columns = {"2"};
    t.result.rows = {{std::int64_t{2}}};
    t.demo_ids = {"a", "b"};
    auto back = abacus::Turn::from_json(t.to_json());
    EXPECT_EQ(back.to_json(), t.to_json());
}

TEST(SessionStore, CreateAppendLoadList) {
    TempDir dir;
    std::int64_t now = 100;
    abacus::SessionStore store(dir.path(), [&] { return now; });
    auto a = store.create("a", "alice");
    EXPECT_TRUE(throws_code(Errc::duplicate_id, [&] { store.create("a", "alice"); }));
    EXPECT_TRUE(throws_code(Errc::invalid_argument, [&] { store.create("../x", "alice"); }));
    store.create("b", "alice");
    store.create("c", "bob");

    abacus::Turn t;
    t.question = "first";
    t.final_sql = "SELECT 1";
    now = 200;
    store.append_turn(a, t);
    EXPECT_EQ(a.turns.size(), 1u);

    auto loaded = store.load("a");
    ASSERT_EQ(loaded.turns.size(), 1u);
    EXPECT_EQ(loaded.turns[0].question, "first");
    EXPECT_EQ(loaded.updated_at, 200);
    EXPECT_EQ(loaded.owner, "alice");

    auto listed = store.list("alice");
    ASSERT_EQ(listed.size(), 2u);
    EXPECT_EQ(listed[0].session_id, "a");
    EXPECT_EQ(listed[1].session_id, "b");
    EXPECT_EQ(store.list("bob").size(), 1u);
    EXPECT_FALSE(store.exists("zzz"));
    EXPECT_TRUE(throws_code(Errc::invalid_argument, [&] { store.load("zzz"); }));
}

TEST(SessionStore, TornLastLineDropped) {
    TempDir dir;
    abacus::SessionStore store(dir.path());
    auto s = store.create("s", "u");
    abacus::Turn t;
    t.question = "kept";
    store.append_turn(s, t);
    {
        std::ofstream out(dir / "s.jsonl", std::ios::app);
        out << "{\"question\": \"half";
    }
    auto loaded = store.load("s");
    ASSERT_EQ(loaded.turns.size(), 1u);
    EXPECT_EQ(loaded.turns[0].question, "kept");
}
