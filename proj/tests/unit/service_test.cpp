#include "abacus/auth.hpp"
#include "abacus/service.hpp"
#include "abacus/util.hpp"

#include "support.hpp"

#include <httplib.h>
#include <gtest/gtest.h>

#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

using abacus::testing::sql_reply;
using abacus::testing::TempDir;

namespace llm = abacus::llm;

namespace {

using Events = std::vector<std::pair<std::string, nlohmann::json>>;

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

const std::vector<std::string> kStops(4, "<DONE>");

// Blocks every call until released; used to hold a turn in flight.
class GateClient final : public llm::Client {
public:
    std::string model_name() const override { return "gate"; }
    void wait_entered() {
        std::unique_lock lock(m_);
        cv_.wait(lock, [&] { return entered_; });
    }
    void release() {
        std::lock_guard lock(m_);
        open_ = true;
        cv_.notify_all();
    }

protected:
    std::string do_complete(std::span<const llm::ChatMessage>, const llm::GenerationParams&,
                            const llm::ChunkConsumer& on_chunk) override {
        std::unique_lock lock(m_);
        entered_ = true;
        cv_.notify_all();
        cv_.wait(lock, [&] { return open_; });
        if (on_chunk) on_chunk("<DONE>");
        return "<DONE>";
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    bool entered_ = false;
    bool open_ = false;
};

class Harness {
public:
    explicit Harness(std::shared_ptr<llm::Client> client, const std::filesystem::path& data_dir)
        : catalog_(std::shared_ptr<abacus::Catalog>(abacus::testing::fixture_catalog(data_dir / "catalog"))) {
        start(std::move(client), data_dir);
    }
    // Reuses an existing data directory and catalog, as after a restart.
    Harness(std::shared_ptr<llm::Client> client, const std::filesystem::path& data_dir, bool)
        : catalog_(std::shared_ptr<abacus::Catalog>(abacus::Catalog::open(data_dir / "catalog"))) {
        start(std::move(client), data_dir);
    }
    ~Harness() {
        service_->stop();
        thread_.join();
    }

    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(30, 0);
        return c;
    }

    httplib::Headers auth(const std::string& token) const { return {{"Authorization", "Bearer " + token}}; }

    std::string login(const std::string& user = "alice", const std::string& password = "pw-123456") {
        auto c = client();
        nlohmann::json body = {{"username", user}, {"password", password}};
        c.Post("/auth/register", body.dump(), "application/json");
        auto res = c.Post("/auth/login", body.dump(), "application/json");
        EXPECT_EQ(res->status, 200);
        return nlohmann::json::parse(res->body)["token"];
    }

    std::string new_session(const std::string& token) {
        auto res = client().Post("/sessions", auth(token), "", "application/json");
        EXPECT_EQ(res->status, 201);
        return nlohmann::json::parse(res->body)["session_id"];
    }

    httplib::Result message(const std::string& token, const std::string& session, const std::string& question) {
        return client().Post("/sessions/" + session + "/message", auth(token),
                             nlohmann::json{{"question", question}}.dump(), "application/json");
    }

    abacus::Service& service() { return *service_; }
    abacus::Catalog& catalog() { return *catalog_; }

private:
    void start(std::shared_ptr<llm::Client> client, const std::filesystem::path& data_dir) {
        abacus::ServiceOptions opt;
        opt.data_dir = data_dir;
        opt.pbkdf2_iterations = 1000;
        auto pool = abacus::load_pool(abacus::testing::data_dir() / "demos" / "default_pool.json", catalog_.get());
        service_ = std::make_unique<abacus::Service>(opt, catalog_, std::move(client), nullptr, std::move(pool));
        port_ = service_->bind("127.0.0.1", 0);
        thread_ = std::thread([this] { service_->run(); });
        for (int i = 0; i < 200; ++i) {
            if (this->client().Get("/healthz")) break;
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    }

    std::shared_ptr<abacus::Catalog> catalog_;
    std::unique_ptr<abacus::Service> service_;
    int port_ = 0;
    std::thread thread_;
};

Events decode(const std::string& body) {
    Events out;
    llm::SseDecoder dec([&](const std::string& e, const std::string& d) { out.emplace_back(e, nlohmann::json::parse(d)); });
    dec.feed(body);
    dec.finish();
    return out;
}

// stage+ (stage|token)* sql (result|error) done
::testing::AssertionResult follows_grammar(const Events& events) {
    std::size_t i = 0;
    if (events.empty() || events[0].first != "stage") return ::testing::AssertionFailure() << "must open with a stage";
    while (i < events.size() && (events[i].first == "stage" || events[i].first == "token")) ++i;
    if (i + 3 != events.size()) return ::testing::AssertionFailure() << "expected exactly sql, outcome, done after stages";
    if (events[i].first != "sql") return ::testing::AssertionFailure() << "missing sql event";
    if (events[i + 1].first != "result" && events[i + 1].first != "error") {
        return ::testing::AssertionFailure() << "missing result/error event";
    }
    if (events[i + 2].first != "done") return ::testing::AssertionFailure() << "missing done event";
    return ::testing::AssertionSuccess();
}

std::string render_transcript(const Events& events, const std::string& session_id) {
    std::string out;
    for (const auto& [e, payload] : events) {
        auto line = payload.dump();
        line = std::regex_replace(line, std::regex(session_id), "<session>");
        out += e + " " + line + "\n";
    }
    return out;
}

std::shared_ptr<llm::Client> mock_of(const std::vector<std::string>& replies) {
    return std::make_shared<llm::ScriptedMock>(llm::ScriptedMock::from_strings(replies));
}

} // namespace

TEST(Service, HealthAndAuthRequired) {
    TempDir dir;
    Harness h(mock_of({}), dir.path());
    auto c = h.client();
    EXPECT_EQ(c.Get("/healthz")->status, 200);
    for (const char* path : {"/sessions", "/databases", "/demos", "/databases/pets/schema", "/sessions/abc"}) {
        EXPECT_EQ(c.Get(path)->status, 401) << path;
        EXPECT_EQ(c.Get(path, h.auth("bogus"))->status, 401) << path;
    }
    EXPECT_EQ(c.Post("/sessions", "", "application/json")->status, 401);
    EXPECT_EQ(c.Post("/demos/augment", "{}", "application/json")->status, 401);
    EXPECT_EQ(c.Post("/sessions/x/message", "{}", "application/json")->status, 401);
}

TEST(Service, RegisterAndLogin) {
    TempDir dir;
    Harness h(mock_of({}), dir.path());
    auto c = h.client();
    nlohmann::json body = {{"username", "bob"}, {"password", "secret-pw"}};
    EXPECT_EQ(c.Post("/auth/register", body.dump(), "application/json")->status, 201);
    EXPECT_EQ(c.Post("/auth/register", body.dump(), "application/json")->status, 409);
    nlohmann::json wrong = {{"username", "bob"}, {"password", "nope"}};
    EXPECT_EQ(c.Post("/auth/login", wrong.dump(), "application/json")->status, 401);
    EXPECT_EQ(c.Post("/auth/login", body.dump(), "application/json")->status, 200);
    auto stored = abacus::read_file(dir / "users.json");
    EXPECT_EQ(stored.find("secret-pw"), std::string::npos);
}

TEST(Service, SessionsCreateListAndScope) {
    TempDir dir;
    Harness h(mock_of({}), dir.path());
    auto alice = h.login("alice");
    auto bob = h.login("bob");
    auto s1 = h.new_session(alice);
    auto s2 = h.new_session(alice);
    EXPECT_NE(s1, s2);
    auto list = nlohmann::json::parse(h.client().Get("/sessions", h.auth(alice))->body);
    EXPECT_EQ(list.size(), 2u);
    EXPECT_EQ(nlohmann::json::parse(h.client().Get("/sessions", h.auth(bob))->body).size(), 0u);
    EXPECT_EQ(h.client().Get("/sessions/" + s1, h.auth(alice))->status, 200);
    EXPECT_EQ(h.client().Get("/sessions/" + s1, h.auth(bob))->status, 404);
    EXPECT_EQ(h.client().Get("/sessions/nosuch", h.auth(alice))->status, 404);
    EXPECT_EQ(h.message(alice, "nosuch", "q")->status, 404);
}

TEST(Service, MessageStreamMatchesGolden) {
    TempDir dir;
    Harness h(mock_of(concat(kStops, {sql_reply("SELECT name FROM singer"), sql_reply("SELECT count(*) FROM singer")})),
              dir.path());
    auto token = h.login();
    auto session = h.new_session(token);
    auto res = h.message(token, session, "How many singers are there?");
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Content-Type"), "text/event-stream");
    auto events = decode(res->body);
    EXPECT_TRUE(follows_grammar(events));

    auto transcript = render_transcript(events, session);
    const auto golden_path = abacus::testing::fixtures_dir() / "golden" / "message_sse.txt";
    if (std::getenv("ABACUS_CAPTURE_GOLDEN")) abacus::write_file_atomic(golden_path, transcript);
    EXPECT_EQ(transcript, abacus::read_file(golden_path));

    auto result = std::find_if(events.begin(), events.end(), [](const auto& e) { return e.first == "result"; });
    ASSERT_NE(result, events.end());
    EXPECT_EQ(result->second["rows"], nlohmann::json::parse("[[5]]"));

    // persisted before done
    auto stored = nlohmann::json::parse(h.client().Get("/sessions/" + session, h.auth(token))->body);
    ASSERT_EQ(stored["turns"].size(), 1u);
    EXPECT_EQ(stored["turns"][0]["final_sql"], "SELECT count(*) FROM singer");
}

TEST(Service, GrammarHoldsForErrorTurns) {
    struct Scenario {
        const char* name;
        std::vector<std::string> replies;
        const char* outcome;
    };
    const std::vector<Scenario> scenarios = {
        {"execution error after debug", concat(kStops, {sql_reply("SELECT x FROM singer"), sql_reply("SELECT x FROM singer"),
                                                       sql_reply("SELECT y FROM singer"), sql_reply("SELECT z FROM singer"),
                                                       sql_reply("SELECT w FROM singer")}),
         "error"},
        {"no sql in generation", concat(kStops, {sql_reply("SELECT 1"), "I do not know."}), "error"},
        {"llm runs dry mid-turn", concat(kStops, {sql_reply("SELECT name FROM singer")}), "error"},
        {"llm fails during retrieval", {}, "error"},
        {"success", concat(kStops, {sql_reply("SELECT 1"), sql_reply("SELECT name FROM singer")}), "result"},
    };
    for (const auto& sc : scenarios) {
        TempDir dir;
        Harness h(mock_of(sc.replies), dir.path());
        auto token = h.login();
        auto session = h.new_session(token);
        auto res = h.message(token, session, "How many singers are there?");
        ASSERT_EQ(res->status, 200) << sc.name;
        auto events = decode(res->body);
        EXPECT_TRUE(follows_grammar(events)) << sc.name << "\n" << res->body;
        ASSERT_GE(events.size(), 3u);
        EXPECT_EQ(events[events.size() - 2].first, sc.outcome) << sc.name;
    }
}

TEST(Service, ConcurrentMessageIsConflict) {
    TempDir dir;
    auto gate = std::make_shared<GateClient>();
    Harness h(gate, dir.path());
    auto token = h.login();
    auto session = h.new_session(token);
    std::thread first([&] { h.message(token, session, "How many singers are there?"); });
    gate->wait_entered();
    auto second = h.message(token, session, "again");
    EXPECT_EQ(second->status, 409);
    gate->release();
    first.join();
    // released once the stream ends
    auto other = h.new_session(token);
    EXPECT_NE(other, session);
}

TEST(Service, CrashRecoveryRebuildsTranscript) {
    TempDir dir;
    std::string session;
    {
        Harness h(mock_of(concat(kStops, {sql_reply("SELECT 1"), sql_reply("SELECT count(*) FROM singer"),
                                          sql_reply("SELECT 1"), sql_reply("SELECT max(age) FROM singer")})),
                  dir.path());
        auto token = h.login();
        session = h.new_session(token);
        h.message(token, session, "How many singers are there?");
        h.message(token, session, "And the oldest age?");
    }
    Harness restarted(mock_of({}), dir.path(), true);
    auto token = restarted.login();
    auto res = restarted.client().Get("/sessions/" + session, restarted.auth(token));
    ASSERT_EQ(res->status, 200);
    auto body = nlohmann::json::parse(res->body);
    ASSERT_EQ(body["turns"].size(), 2u);
    EXPECT_EQ(body["turns"][0]["question"], "How many singers are there?");
    EXPECT_EQ(body["turns"][1]["final_sql"], "SELECT max(age) FROM singer");
    EXPECT_EQ(body["db_id"], "concert_singer");
}

TEST(Service, DatabaseUploadAndBrowse) {
    TempDir dir;
    Harness h(mock_of({}), dir.path());
    auto token = h.login();
    abacus::materialize_script(abacus::read_file(abacus::testing::fixtures_dir() / "two_table.sql"), dir / "two.sqlite");
    httplib::MultipartFormDataItems items = {
        {"file", abacus::read_file(dir / "two.sqlite"), "two.sqlite", "application/octet-stream"},
        {"db_id", "uploaded", "", ""},
    };
    auto res = h.client().Post("/databases", h.auth(token), items);
    ASSERT_EQ(res->status, 201) << res->body;
    EXPECT_EQ(nlohmann::json::parse(res->body)["db_id"], "uploaded");
    EXPECT_EQ(h.client().Post("/databases", h.auth(token), items)->status, 409);

    auto schema = nlohmann::json::parse(h.client().Get("/databases/uploaded/schema", h.auth(token))->body);
    EXPECT_EQ(schema["tables"].size(), 2u);
    EXPECT_NE(schema["ddl"].get<std::string>().find("FOREIGN KEY (singer_id) REFERENCES singer"), std::string::npos);

    auto rows = nlohmann::json::parse(h.client().Get("/databases/uploaded/tables/singer/rows?limit=3", h.auth(token))->body);
    EXPECT_EQ(rows["rows"].size(), 3u);
    EXPECT_EQ(h.client().Get("/databases/uploaded/tables/nope/rows", h.auth(token))->status, 404);
    EXPECT_EQ(h.client().Get("/databases/nope/schema", h.auth(token))->status, 404);

    httplib::MultipartFormDataItems corrupt = {{"file", "not a database at all", "bad.sqlite", ""}};
    auto bad = h.client().Post("/databases", h.auth(token), corrupt);
    EXPECT_EQ(bad->status, 400);
    EXPECT_NE(bad->body.find("corrupt"), std::string::npos);

    auto list = nlohmann::json::parse(h.client().Get("/databases", h.auth(token))->body);
    EXPECT_EQ(list.size(), 5u);
}

TEST(Service, DemoUploadAndAugment) {
    TempDir dir;
    Harness h(mock_of({}), dir.path());
    auto token = h.login();
    nlohmann::json five = nlohmann::json::array();
    for (int i = 0; i < 5; ++i) {
        five.push_back({{"demo_id", "up-" + std::to_string(i)},
                        {"db_id", "pets"},
                        {"turns", {{{"question", "q" + std::to_string(i)}, {"sql", "SELECT " + std::to_string(i)}}}}});
    }
    auto res = h.client().Post("/demos", h.auth(token), five.dump(2), "application/json");
    ASSERT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(nlohmann::json::parse(res->body)["pool_size"], 5);
    EXPECT_EQ(h.service().pool_size(), 5u);
    EXPECT_TRUE(std::filesystem::exists(dir / "pool.json"));

    auto broken = five;
    broken[3]["turns"][0].erase("sql");
    auto bad = h.client().Post("/demos", h.auth(token), broken.dump(2), "application/json");
    EXPECT_EQ(bad->status, 400);
    EXPECT_NE(bad->body.find("entry 3"), std::string::npos) << bad->body;
    EXPECT_NE(bad->body.find("line"), std::string::npos) << bad->body;
    EXPECT_EQ(h.service().pool_size(), 5u);

    auto aug = h.client().Post("/demos/augment", h.auth(token), R"({"rounds": 0})", "application/json");
    ASSERT_EQ(aug->status, 200);
    auto summary = nlohmann::json::parse(aug->body);
    EXPECT_EQ(summary["candidates"], 0);
    EXPECT_EQ(summary["accepted"], 0);
    EXPECT_EQ(summary["pool_size"], 5);
}

TEST(Service, StatusMapping) {
    EXPECT_EQ(abacus::http_status_for(abacus::Errc::duplicate_id), 409);
    EXPECT_EQ(abacus::http_status_for(abacus::Errc::unknown_table), 404);
    EXPECT_EQ(abacus::http_status_for(abacus::Errc::corrupt_database), 400);
    EXPECT_EQ(abacus::http_status_for(abacus::Errc::empty_database), 400);
    EXPECT_EQ(abacus::http_status_for(abacus::Errc::llm_transport), 502);
}

TEST(Auth, DigestIsSaltedPbkdf2) {
    // RFC 7914 section 11 test vector for PBKDF2-HMAC-SHA256 (first 32 bytes, c = 1)
    EXPECT_EQ(abacus::derive_password_digest("passwd", "salt", 1),
              "55ac046e56e3089fec1691c22544b605f94185216dde0465e68b9d57c20dacbc");
    EXPECT_NE(abacus::random_hex(16), abacus::random_hex(16));
}
