#include "abacus/service.hpp"

#include "abacus/auth.hpp"
#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <httplib.h>

#include <regex>
#include <set>
#include <shared_mutex>

namespace abacus {

int http_status_for(Errc code) noexcept {
    switch (code) {
    case Errc::duplicate_id: return 409;
    case Errc::unknown_database:
    case Errc::unknown_table: return 404;
    case Errc::llm_transport:
    case Errc::llm_bad_response:
    case Errc::mock_exhausted:
    case Errc::mock_miss: return 502;
    case Errc::io: return 500;
    default: return 400;
    }
}

std::vector<std::pair<std::string, nlohmann::json>> terminal_events(const Turn& turn, const std::string& session_id,
                                                                    std::size_t turn_index) {
    std::vector<std::pair<std::string, nlohmann::json>> out;
    out.emplace_back("sql", nlohmann::json{{"sql", turn.final_sql}});
    if (turn.error) {
        out.emplace_back("error", nlohmann::json{{"stage", turn.error->stage},
                                                 {"code", turn.error->code},
                                                 {"message", turn.error->message}});
    } else if (!turn.result.ok()) {
        out.emplace_back("error", nlohmann::json{{"stage", "execution"},
                                                 {"code", to_string(turn.result.error->kind)},
                                                 {"message", turn.result.error->message}});
    } else {
        out.emplace_back("result", to_json(turn.result));
    }
    out.emplace_back("done", nlohmann::json{{"session_id", session_id}, {"turn_index", turn_index}});
    return out;
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

nlohmann::json parse_body(const httplib::Request& req) {
    try {
        auto j = nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body);
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::invalid_argument, std::string("request body is not valid JSON: ") + e.what());
    }
}

std::string required_string(const nlohmann::json& body, const char* key) {
    if (!body.is_object() || !body.contains(key) || !body[key].is_string() || body[key].get<std::string>().empty()) {
        throw Error(Errc::invalid_argument, std::string("missing string field \"") + key + "\"");
    }
    return body[key].get<std::string>();
}

nlohmann::json schema_json(const DatabaseEntry& e) {
    nlohmann::json tables = nlohmann::json::array();
    for (const auto& t : e.tables) {
        nlohmann::json cols = nlohmann::json::array();
        for (const auto& c : t.columns) {
            nlohmann::json ref = nullptr;
            if (c.foreign_ref) ref = {{"table", c.foreign_ref->table}, {"column", c.foreign_ref->column}};
            cols.push_back({{"name", c.name}, {"type", c.declared_type}, {"primary_key", c.is_primary_key},
                            {"references", ref}});
        }
        tables.push_back({{"name", t.name}, {"row_count", t.row_count}, {"columns", std::move(cols)}});
    }
    return {{"db_id", e.db_id}, {"display_name", e.display_name}, {"tables", std::move(tables)},
            {"ddl", serialize_schema(e)}};
}

} // namespace

struct Service::Impl {
    ServiceOptions opt;
    std::shared_ptr<Catalog> catalog;
    std::shared_ptr<llm::Client> client;
    std::shared_ptr<const TableScorer> scorer;
    SessionStore sessions;
    UserStore users;

    mutable std::shared_mutex pool_mutex;
    std::shared_ptr<const DemoPool> pool;
    std::mutex pool_writer; // uploads and augmentation

    std::mutex inflight_mutex;
    std::set<std::string> inflight;

    httplib::Server server;
    bool bound = false;

    Impl(ServiceOptions o, std::shared_ptr<Catalog> c, std::shared_ptr<llm::Client> l,
         std::shared_ptr<const TableScorer> s, DemoPool p)
        : opt(std::move(o)),
          catalog(std::move(c)),
          client(std::move(l)),
          scorer(std::move(s)),
          sessions(opt.data_dir / "sessions"),
          users(opt.data_dir / "users.json", opt.pbkdf2_iterations),
          pool(std::make_shared<const DemoPool>(std::move(p))) {
        routes();
    }

    std::shared_ptr<const DemoPool> pool_snapshot() const {
        std::shared_lock lock(pool_mutex);
        return pool;
    }

    void replace_pool(DemoPool next) {
        auto p = std::make_shared<const DemoPool>(std::move(next));
        save_pool(*p, opt.data_dir / "pool.json");
        std::unique_lock lock(pool_mutex);
        pool = std::move(p);
    }

    std::optional<std::string> authenticate(const httplib::Request& req, httplib::Response& res) {
        auto header = req.get_header_value("Authorization");
        const std::string prefix = "Bearer ";
        if (header.size() > prefix.size() && header.compare(0, prefix.size(), prefix) == 0) {
            if (auto user = users.resolve(header.substr(prefix.size()))) return user;
        }
        send_error(res, 401, "unauthenticated", "missing or invalid bearer token");
        return std::nullopt;
    }

    // Runs `fn` for an authenticated user, mapping module errors to statuses.
    template <class Fn>
    httplib::Server::Handler authed(Fn fn) {
        return [this, fn](const httplib::Request& req, httplib::Response& res) {
            auto user = authenticate(req, res);
            if (!user) return;
            guarded(res, [&] { fn(req, res, *user); });
        };
    }

    template <class Fn>
    static void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            send_error(res, http_status_for(e.code()), to_string(e.code()), e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    }

    // A session visible to `user`, or nullopt after answering 404.
    std::optional<SessionState> owned_session(const std::string& id, const std::string& user,
                                              httplib::Response& res) {
        if (sessions.exists(id)) {
            auto s = sessions.load(id);
            if (s.owner == user) return s;
        }
        send_error(res, 404, "unknown_session", "unknown session: " + id);
        return std::nullopt;
    }

    PipelineDeps deps(const DemoPool* snapshot) const {
        PipelineDeps d;
        d.catalog = catalog.get();
        d.pool = snapshot;
        d.client = client.get();
        d.scorer = scorer.get();
        d.cfg = opt.pipeline;
        d.retrieval = opt.retrieval;
        d.generation = opt.generation;
        d.prompts = opt.prompts;
        d.exec = opt.exec;
        return d;
    }

    void routes();
    void stream_turn(const std::string& session_id, SessionState state, const std::string& question,
                     httplib::Response& res);
};

void Service::Impl::routes() {
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"status", "ok"}});
    });

    server.Post("/auth/register", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto body = parse_body(req);
            auto name = required_string(body, "username");
            users.register_user(name, required_string(body, "password"));
            send_json(res, 201, {{"username", name}});
        });
    });

    server.Post("/auth/login", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto body = parse_body(req);
            auto token = users.login(required_string(body, "username"), required_string(body, "password"));
            if (!token) return send_error(res, 401, "unauthenticated", "bad username or password");
            send_json(res, 200, {{"token", *token}});
        });
    });

    // --- sessions ---
    server.Post("/sessions", authed([this](const httplib::Request&, httplib::Response& res, const std::string& user) {
        auto s = sessions.create("s" + random_hex(8), user);
        send_json(res, 201, {{"session_id", s.session_id}});
    }));

    server.Get("/sessions", authed([this](const httplib::Request&, httplib::Response& res, const std::string& user) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& s : sessions.list(user)) {
            auto item = s.meta_json();
            item["title"] = s.turns.empty() ? "" : s.turns.front().question.substr(0, 80);
            out.push_back(std::move(item));
        }
        send_json(res, 200, out);
    }));

    server.Get(R"(/sessions/([A-Za-z0-9_-]+))",
               authed([this](const httplib::Request& req, httplib::Response& res, const std::string& user) {
                   auto s = owned_session(req.matches[1], user, res);
                   if (!s) return;
                   auto out = s->meta_json();
                   out["turns"] = nlohmann::json::array();
                   for (const auto& t : s->turns) out["turns"].push_back(t.to_json());
                   send_json(res, 200, out);
               }));

    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/message)",
                authed([this](const httplib::Request& req, httplib::Response& res, const std::string& user) {
                    std::string id = req.matches[1];
                    auto s = owned_session(id, user, res);
                    if (!s) return;
                    auto question = required_string(parse_body(req), "question");
                    if (catalog->empty()) throw Error(Errc::empty_catalog, "no databases uploaded yet");
                    stream_turn(id, std::move(*s), question, res);
                }));

    // --- databases ---
    server.Post("/databases", authed([this](const httplib::Request& req, httplib::Response& res, const std::string&) {
        if (!req.is_multipart_form_data() || !req.has_file("file")) {
            return send_error(res, 400, "invalid_argument", "expected multipart form with a \"file\" field");
        }
        auto file = req.get_file_value("file");
        std::string id = req.has_file("db_id") ? req.get_file_value("db_id").content
                                               : std::filesystem::path(file.filename).stem().string();
        static const std::regex ok("[A-Za-z0-9_-]{1,128}");
        if (!std::regex_match(id, ok)) {
            return send_error(res, 400, "invalid_argument", "invalid database id: \"" + id + "\"");
        }
        std::string display = req.has_file("display_name") ? req.get_file_value("display_name").content
                                                            : file.filename;
        auto entry = catalog->ingest_bytes(file.content, id, display);
        send_json(res, 201, {{"db_id", entry->db_id}, {"tables", entry->table_names()}});
    }));

    server.Get("/databases", authed([this](const httplib::Request&, httplib::Response& res, const std::string&) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& e : catalog->entries()) {
            out.push_back({{"db_id", e->db_id}, {"display_name", e->display_name}, {"tables", e->table_names()}});
        }
        send_json(res, 200, out);
    }));

    server.Get(R"(/databases/([^/]+)/schema)",
               authed([this](const httplib::Request& req, httplib::Response& res, const std::string&) {
                   send_json(res, 200, schema_json(*catalog->at(req.matches[1].str())));
               }));

    server.Get(R"(/databases/([^/]+)/tables/([^/]+)/rows)",
               authed([this](const httplib::Request& req, httplib::Response& res, const std::string&) {
                   auto entry = catalog->at(req.matches[1].str());
                   int limit = 50;
                   if (req.has_param("limit")) {
                       try {
                           limit = std::stoi(req.get_param_value("limit"));
                       } catch (const std::exception&) {
                           throw Error(Errc::invalid_argument, "limit must be an integer");
                       }
                   }
                   auto table = preview_rows(*entry, req.matches[2].str(), limit);
                   nlohmann::json rows = nlohmann::json::array();
                   for (const auto& row : table.rows) {
                       nlohmann::json jr = nlohmann::json::array();
                       for (const auto& v : row) jr.push_back(to_json(v));
                       rows.push_back(std::move(jr));
                   }
                   send_json(res, 200, {{"columns", table.columns}, {"rows", std::move(rows)}});
               }));

    // --- demonstrations ---
    server.Get("/demos", authed([this](const httplib::Request&, httplib::Response& res, const std::string&) {
        send_json(res, 200, pool_to_json(*pool_snapshot()));
    }));

    server.Post("/demos", authed([this](const httplib::Request& req, httplib::Response& res, const std::string&) {
        auto demos = parse_pool(req.body, catalog.get());
        bool merge = req.has_param("mode") && req.get_param_value("mode") == "merge";
        std::lock_guard lock(pool_writer);
        auto next = merge ? update_pool(*pool_snapshot(), demos, catalog.get())
                          : DemoPool::build(std::move(demos), catalog.get());
        auto size = next.size();
        replace_pool(std::move(next));
        send_json(res, 200, {{"pool_size", size}});
    }));

    server.Post("/demos/augment", authed([this](const httplib::Request& req, httplib::Response& res,
                                                const std::string&) {
        auto body = parse_body(req);
        auto cfg = opt.fused;
        if (body.contains("rounds")) {
            if (!body["rounds"].is_number_integer() || body["rounds"].get<int>() < 0) {
                throw Error(Errc::invalid_argument, "rounds must be a non-negative integer");
            }
            cfg.rounds = body["rounds"].get<int>();
        }
        if (body.contains("seed") && body["seed"].is_number_unsigned()) cfg.random_seed = body["seed"].get<std::uint64_t>();
        std::lock_guard lock(pool_writer);
        auto [next, summary] = augment_pool(*pool_snapshot(), *catalog, *client, cfg, opt.prompts.fusion);
        auto out = summary.to_json();
        out["pool_size"] = next.size();
        if (summary.accepted > 0) replace_pool(std::move(next));
        send_json(res, 200, out);
    }));
}

void Service::Impl::stream_turn(const std::string& session_id, SessionState state, const std::string& question,
                                httplib::Response& res) {
    {
        std::lock_guard lock(inflight_mutex);
        if (!inflight.insert(session_id).second) {
            return send_error(res, 409, "turn_in_flight", "a turn is already running for session " + session_id);
        }
    }
    auto session = std::make_shared<SessionState>(std::move(state));
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, session, question](std::size_t, httplib::DataSink& sink) {
            bool open = true;
            auto send = [&](std::string_view event, const nlohmann::json& payload) {
                if (!open) return;
                auto frame = llm::format_sse(event, payload.dump());
                open = sink.write(frame.data(), frame.size());
            };
            TurnObserver observer;
            observer.on_stage = [&](const std::string& stage, const nlohmann::json& payload) {
                nlohmann::json p = payload.is_object() ? payload : nlohmann::json::object();
                p["stage"] = stage;
                send("stage", p);
            };
            observer.on_token = [&](std::string_view text) { send("token", {{"text", text}}); };

            auto pool_now = pool_snapshot();
            Turn turn;
            try {
                turn = process_turn(*session, question, deps(pool_now.get()), observer, &sessions);
            } catch (const Error& e) {
                // failure outside the turn's own error handling: nothing was persisted
                send("stage", {{"stage", "internal"}, {"error", e.what()}});
                turn.question = question;
                turn.error = TurnError{"internal", std::string(to_string(e.code())), e.what()};
            } catch (const std::exception& e) {
                send("stage", {{"stage", "internal"}, {"error", e.what()}});
                turn.question = question;
                turn.error = TurnError{"internal", "internal", e.what()};
            }
            std::size_t index = session->turns.empty() ? 0 : session->turns.size() - 1;
            {
                // free the slot before done so a client may send its next question right away
                std::lock_guard lock(inflight_mutex);
                inflight.erase(session->session_id);
            }
            for (const auto& [event, payload] : terminal_events(turn, session->session_id, index)) send(event, payload);
            sink.done();
            return true;
        },
        [this, session_id](bool) {
            std::lock_guard lock(inflight_mutex);
            inflight.erase(session_id);
        });
}

Service::Service(ServiceOptions options, std::shared_ptr<Catalog> catalog, std::shared_ptr<llm::Client> client,
                 std::shared_ptr<const TableScorer> scorer, DemoPool initial_pool) {
    if (!catalog || !client) throw Error(Errc::invalid_argument, "service needs a catalog and an LLM client");
    if (!scorer) scorer = std::make_shared<Bm25TableScorer>();
    options.pipeline.validate();
    options.retrieval.validate();
    std::filesystem::create_directories(options.data_dir);
    impl_ = std::make_unique<Impl>(std::move(options), std::move(catalog), std::move(client), std::move(scorer),
                                   std::move(initial_pool));
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
    int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(Errc::io, "cannot bind " + host + ":" + std::to_string(port));
    impl_->bound = true;
    return bound;
}

void Service::run() {
    if (!impl_->bound) throw Error(Errc::invalid_argument, "bind() before run()");
    impl_->server.listen_after_bind();
}

void Service::stop() {
    if (impl_) impl_->server.stop();
}

std::size_t Service::pool_size() const { return impl_->pool_snapshot()->size(); }

} // namespace abacus
