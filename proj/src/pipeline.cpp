#include "abacus/pipeline.hpp"

#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <regex>
#include <set>

namespace abacus {

void PipelineConfig::validate() const {
    if (n_shot < 0) throw Error(Errc::invalid_argument, "n_shot must be >= 0");
    if (max_debug_iters < 0) throw Error(Errc::invalid_argument, "max_debug_iters must be >= 0");
}

nlohmann::json PipelineConfig::to_json() const {
    return {{"n_shot", n_shot},
            {"max_debug_iters", max_debug_iters},
            {"enable_pre_sql", enable_pre_sql},
            {"enable_self_debug", enable_self_debug},
            {"retrieval_per_turn", retrieval_per_turn}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        c.n_shot = j.value("n_shot", c.n_shot);
        c.max_debug_iters = j.value("max_debug_iters", c.max_debug_iters);
        c.enable_pre_sql = j.value("enable_pre_sql", c.enable_pre_sql);
        c.enable_self_debug = j.value("enable_self_debug", c.enable_self_debug);
        c.retrieval_per_turn = j.value("retrieval_per_turn", c.retrieval_per_turn);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("pipeline config: ") + e.what());
    }
    c.validate();
    return c;
}

// --- Turn / session JSON -------------------------------------------------------------------

nlohmann::json Turn::to_json() const {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& s : debug_trace) trace.push_back({{"sql", s.sql}, {"error", s.error}});
    nlohmann::json j = {
        {"question", question},
        {"db_id", db_id},
        {"retrieval", retrieval ? retrieval->to_json() : nlohmann::json(nullptr)},
        {"demo_ids", demo_ids},
        {"pre_sql", pre_sql ? nlohmann::json(*pre_sql) : nlohmann::json(nullptr)},
        {"filtered_tables", filtered_tables ? nlohmann::json(*filtered_tables) : nlohmann::json(nullptr)},
        {"pre_sql_fallback", pre_sql_fallback},
        {"final_sql", final_sql},
        {"debug_trace", std::move(trace)},
        {"result", abacus::to_json(result)},
        {"error", nullptr},
    };
    if (error) j["error"] = {{"stage", error->stage}, {"code", error->code}, {"message", error->message}};
    return j;
}

Turn Turn::from_json(const nlohmann::json& j) {
    Turn t;
    t.question = j.at("question").get<std::string>();
    t.db_id = j.value("db_id", "");
    if (j.contains("retrieval") && !j["retrieval"].is_null()) t.retrieval = RetrievalResult::from_json(j["retrieval"]);
    t.demo_ids = j.value("demo_ids", std::vector<std::string>{});
    if (j.contains("pre_sql") && !j["pre_sql"].is_null()) t.pre_sql = j["pre_sql"].get<std::string>();
    if (j.contains("filtered_tables") && !j["filtered_tables"].is_null()) {
        t.filtered_tables = j["filtered_tables"].get<sql::TableRefSet>();
    }
    t.pre_sql_fallback = j.value("pre_sql_fallback", false);
    t.final_sql = j.value("final_sql", "");
    for (const auto& s : j.value("debug_trace", nlohmann::json::array())) {
        t.debug_trace.push_back({s.at("sql").get<std::string>(), s.at("error").get<std::string>()});
    }
    t.result = execution_result_from_json(j.at("result"));
    if (j.contains("error") && !j["error"].is_null()) {
        const auto& e = j["error"];
        t.error = TurnError{e.at("stage").get<std::string>(), e.at("code").get<std::string>(),
                            e.at("message").get<std::string>()};
    }
    return t;
}

nlohmann::json SessionState::meta_json() const {
    return {{"session_id", session_id}, {"owner", owner},          {"db_id", db_id},
            {"created_at", created_at}, {"updated_at", updated_at}, {"turn_count", turns.size()}};
}

// --- prompt assembly -----------------------------------------------------------------------

namespace {

std::string fenced(const std::string& sql_text) { return "```sql\n" + sql_text + "\n```"; }

std::string render_history(const SessionState& session) {
    if (session.turns.empty()) return "(none)\n";
    std::string out;
    for (std::size_t i = 0; i < session.turns.size(); ++i) {
        auto n = std::to_string(i + 1);
        out += "Q" + n + ": " + session.turns[i].question + "\n";
        out += "SQL" + n + ": " + session.turns[i].final_sql + "\n";
    }
    return out;
}

} // namespace

PromptBundle build_prompt(const SessionState& session, const std::string& schema_text,
                          const std::vector<Demonstration>& demos, const std::string& question,
                          const PromptTemplates& prompts, const std::string& system_text) {
    if (schema_text.empty()) throw Error(Errc::invalid_argument, "schema text is empty");
    PromptBundle b;
    b.messages.push_back({llm::Role::system, system_text});
    for (const auto& d : demos) {
        for (const auto& t : d.turns) {
            b.messages.push_back({llm::Role::user, t.question});
            b.messages.push_back({llm::Role::assistant, fenced(t.sql)});
        }
    }
    b.messages.push_back({llm::Role::user, render_template(prompts.question, {{"schema", schema_text},
                                                                              {"history", render_history(session)},
                                                                              {"question", question}})});
    return b;
}

PromptBundle build_prompt(const SessionState& session, const std::string& schema_text,
                          const std::vector<Demonstration>& demos, const std::string& question,
                          const PromptTemplates& prompts) {
    return build_prompt(session, schema_text, demos, question, prompts, prompts.system);
}

namespace {

std::string strip_statement(std::string_view s) {
    auto t = trim(s);
    while (!t.empty() && t.back() == ';') t = trim(t.substr(0, t.size() - 1));
    return std::string(t);
}

// End of the statement starting at `from`: first ';' outside quotes, a blank
// line, or a code fence.
std::size_t statement_end(std::string_view text, std::size_t from) {
    char quote = 0;
    for (std::size_t i = from; i < text.size(); ++i) {
        char c = text[i];
        if (quote) {
            if (c == quote) quote = 0;
            continue;
        }
        if (c == '\'' || c == '"' || c == '`') {
            if (c == '`' && text.substr(i, 3) == "```") return i;
            quote = c;
        } else if (c == ';') {
            return i;
        } else if (c == '\n' && text.substr(i, 2) == "\n\n") {
            return i;
        }
    }
    return text.size();
}

} // namespace

std::string extract_sql(std::string_view text) {
    if (auto open = text.find("```"); open != std::string_view::npos) {
        auto eol = text.find('\n', open + 3);
        auto close = text.find("```", open + 3);
        std::string_view body;
        if (close != std::string_view::npos && (eol == std::string_view::npos || close < eol)) {
            body = text.substr(open + 3, close - open - 3); // ```SELECT 1```
        } else if (eol != std::string_view::npos) {
            close = text.find("```", eol + 1);
            body = text.substr(eol + 1, close == std::string_view::npos ? std::string_view::npos : close - eol - 1);
        }
        auto sql_text = strip_statement(body);
        if (!sql_text.empty()) return sql_text;
    }

    static const std::regex start(R"(\b(SELECT\b|WITH\s+(RECURSIVE\s+)?[\w"`\[]))", std::regex::icase);
    std::string owned(text);
    std::smatch m;
    if (std::regex_search(owned, m, start)) {
        auto from = static_cast<std::size_t>(m.position(0));
        auto sql_text = strip_statement(std::string_view(owned).substr(from, statement_end(owned, from) - from));
        if (!sql_text.empty()) return sql_text;
    }
    throw Error(Errc::no_sql_found, "no SQL statement in model output");
}

// --- Pre-SQL ---------------------------------------------------------------------------------

PreSqlOutcome pre_sql_filter(const SessionState& session, const DatabaseEntry& entry,
                             const std::vector<Demonstration>& demos, const std::string& question,
                             llm::Client& client, const PipelineDeps& deps) {
    PreSqlOutcome out;
    out.schema_text = serialize_schema(entry);
    auto bundle = build_prompt(session, out.schema_text, demos, question, deps.prompts, deps.prompts.pre_sql);
    auto reply = client.complete(bundle.messages, deps.generation);

    try {
        out.pre_sql = extract_sql(reply);
    } catch (const Error& e) {
        if (e.code() != Errc::no_sql_found) throw;
        out.fallback = true;
        return out;
    }

    std::set<std::string> base;
    try {
        for (const auto& ref : sql::extract_table_refs(*out.pre_sql)) {
            if (const auto* t = entry.find_table(ref)) base.insert(to_lower(t->name));
        }
    } catch (const Error& e) {
        if (e.code() != Errc::parse_failure && e.code() != Errc::unterminated_string) throw;
        base.clear();
    }
    if (base.empty()) {
        out.fallback = true;
        return out;
    }

    sql::TableRefSet expanded(base.begin(), base.end());
    for (const auto& t : entry.tables) {
        auto from = to_lower(t.name);
        for (const auto& c : t.columns) {
            if (!c.foreign_ref) continue;
            auto to = to_lower(c.foreign_ref->table);
            if (base.contains(from)) expanded.insert(to);
            if (base.contains(to)) expanded.insert(from);
        }
    }
    std::vector<std::string> subset;
    for (const auto& t : entry.tables) {
        if (expanded.contains(to_lower(t.name))) subset.push_back(t.name);
    }
    out.filtered_tables = std::move(expanded);
    out.schema_text = serialize_schema(entry, subset);
    return out;
}

// --- Self-Debug ------------------------------------------------------------------------------

DebugOutcome self_debug(const std::string& sql_text, const DatabaseEntry& entry, const std::string& question,
                        const std::string& schema_text, llm::Client& client, const PipelineDeps& deps) {
    DebugOutcome out;
    out.final_sql = sql_text;
    out.result = execute(entry, out.final_sql, deps.exec);
    if (!deps.cfg.enable_self_debug) return out;

    while (!out.result.ok() && static_cast<int>(out.trace.size()) < deps.cfg.max_debug_iters) {
        std::string error_text = out.result.error->message;
        std::vector<llm::ChatMessage> messages = {
            {llm::Role::system, deps.prompts.system},
            {llm::Role::user, render_template(deps.prompts.debug, {{"error", error_text},
                                                                   {"schema", schema_text},
                                                                   {"question", question},
                                                                   {"sql", out.final_sql}})},
        };
        std::string reply;
        try {
            reply = client.complete(messages, deps.generation);
        } catch (const Error& e) {
            if (!e.is_llm_failure()) throw;
            out.error = TurnError{"debug", std::string(to_string(e.code())), e.what()};
            return out;
        }
        out.trace.push_back({out.final_sql, error_text});
        try {
            out.final_sql = extract_sql(reply);
        } catch (const Error& e) {
            if (e.code() != Errc::no_sql_found) throw;
            // keep the failing statement; the next round sees the same error
        }
        out.result = execute(entry, out.final_sql, deps.exec);
    }
    return out;
}

// --- turn orchestration ----------------------------------------------------------------------

namespace {

ExecutionResult not_executed(const std::string& why) {
    ExecutionResult r;
    r.error = ExecError{"not executed: " + why, ExecErrorKind::runtime};
    return r;
}

nlohmann::json trace_json(const std::vector<DebugStep>& trace) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : trace) a.push_back({{"sql", s.sql}, {"error", s.error}});
    return a;
}

} // namespace

Turn process_turn(SessionState& session, const std::string& question, const PipelineDeps& deps,
                  const TurnObserver& observer, SessionStore* store) {
    if (!deps.catalog || !deps.client) throw Error(Errc::invalid_argument, "pipeline needs a catalog and a client");
    deps.cfg.validate();
    auto& client = *deps.client;

    Turn turn;
    turn.question = question;
    auto emit = [&](const std::string& stage, const nlohmann::json& payload) {
        if (observer.on_stage) observer.on_stage(stage, payload);
    };
    auto finish = [&]() -> Turn {
        turn.db_id = session.db_id;
        if (store) {
            store->append_turn(session, turn);
        } else {
            session.turns.push_back(turn);
        }
        return turn;
    };
    auto abort_turn = [&](const std::string& stage, const Error& e) -> Turn {
        turn.error = TurnError{stage, std::string(to_string(e.code())), e.what()};
        turn.result = not_executed(e.what());
        emit(stage, {{"error", turn.error->message}});
        return finish();
    };

    if (session.db_id.empty() || deps.cfg.retrieval_per_turn) {
        Bm25TableScorer fallback_scorer;
        const TableScorer& scorer = deps.scorer ? *deps.scorer : fallback_scorer;
        try {
            auto r = murre_retrieve(question, *deps.catalog, deps.retrieval, client, scorer, deps.prompts.rewrite);
            session.db_id = select_database(r.databases);
            r.finished.clear();
            turn.retrieval = std::move(r);
        } catch (const Error& e) {
            return abort_turn("retrieval", e);
        }
        auto payload = turn.retrieval->to_json();
        payload["db_id"] = session.db_id;
        emit("retrieval", payload);
    }

    auto entry = deps.catalog->find(session.db_id);
    if (!entry) return abort_turn("retrieval", Error(Errc::unknown_database, "unknown database: " + session.db_id));

    std::vector<std::string> history;
    for (const auto& t : session.turns) history.push_back(t.question);
    std::vector<Demonstration> demos;
    if (deps.pool) demos = select_demos(question, history, *deps.pool, deps.cfg.n_shot);
    for (const auto& d : demos) turn.demo_ids.push_back(d.demo_id);
    emit("demos", {{"demo_ids", turn.demo_ids}});

    std::string schema_text;
    if (deps.cfg.enable_pre_sql) {
        PreSqlOutcome pre;
        try {
            pre = pre_sql_filter(session, *entry, demos, question, client, deps);
        } catch (const Error& e) {
            if (!e.is_llm_failure()) throw;
            return abort_turn("pre-sql", e);
        }
        schema_text = std::move(pre.schema_text);
        turn.pre_sql = std::move(pre.pre_sql);
        turn.filtered_tables = std::move(pre.filtered_tables);
        turn.pre_sql_fallback = pre.fallback;
        emit("pre-sql", {{"pre_sql", turn.pre_sql ? nlohmann::json(*turn.pre_sql) : nlohmann::json(nullptr)},
                         {"filtered_tables", turn.filtered_tables ? nlohmann::json(*turn.filtered_tables)
                                                                  : nlohmann::json(nullptr)},
                         {"fallback", turn.pre_sql_fallback}});
    } else {
        schema_text = serialize_schema(*entry);
    }

    auto bundle = build_prompt(session, schema_text, demos, question, deps.prompts);
    emit("generation", nlohmann::json::object());
    std::string reply;
    try {
        reply = client.complete(bundle.messages, deps.generation, observer.on_token);
    } catch (const Error& e) {
        if (!e.is_llm_failure()) throw;
        return abort_turn("generation", e);
    }
    std::string generated;
    try {
        generated = extract_sql(reply);
    } catch (const Error& e) {
        if (e.code() != Errc::no_sql_found) throw;
        return abort_turn("generation", e);
    }

    auto debug = self_debug(generated, *entry, question, schema_text, client, deps);
    turn.final_sql = std::move(debug.final_sql);
    turn.debug_trace = std::move(debug.trace);
    turn.result = std::move(debug.result);
    turn.error = std::move(debug.error);
    if (deps.cfg.enable_self_debug) emit("debug", {{"trace", trace_json(turn.debug_trace)}});
    emit("execution", {{"ok", turn.result.ok()},
                       {"row_count", turn.result.rows.size()},
                       {"truncated", turn.result.truncated}});
    return finish();
}

// --- SessionStore --------------------------------------------------------------------------

namespace {

void check_session_id(const std::string& id) {
    static const std::regex ok("[A-Za-z0-9_-]{1,128}");
    if (!std::regex_match(id, ok)) throw Error(Errc::invalid_argument, "invalid session id: " + id);
}

std::int64_t wall_clock() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

SessionState meta_from_json(const nlohmann::json& j) {
    SessionState s;
    s.session_id = j.at("session_id").get<std::string>();
    s.owner = j.value("owner", "");
    s.db_id = j.value("db_id", "");
    s.created_at = j.value("created_at", std::int64_t{0});
    s.updated_at = j.value("updated_at", std::int64_t{0});
    return s;
}

} // namespace

SessionStore::SessionStore(std::filesystem::path dir, Clock clock)
    : dir_(std::move(dir)), clock_(clock ? std::move(clock) : Clock(wall_clock)) {
    std::filesystem::create_directories(dir_);
}

std::filesystem::path SessionStore::meta_path(const std::string& id) const { return dir_ / (id + ".meta.json"); }
std::filesystem::path SessionStore::log_path(const std::string& id) const { return dir_ / (id + ".jsonl"); }

void SessionStore::write_meta(const SessionState& s) const {
    write_file_atomic(meta_path(s.session_id), s.meta_json().dump(2) + "\n");
}

SessionState SessionStore::create(const std::string& session_id, const std::string& owner) {
    check_session_id(session_id);
    std::lock_guard lock(mutex_);
    if (std::filesystem::exists(meta_path(session_id))) {
        throw Error(Errc::duplicate_id, "session already exists: " + session_id);
    }
    SessionState s;
    s.session_id = session_id;
    s.owner = owner;
    s.created_at = s.updated_at = clock_();
    write_file_atomic(log_path(session_id), "");
    write_meta(s);
    return s;
}

void SessionStore::append_turn(SessionState& session, const Turn& turn) {
    check_session_id(session.session_id);
    std::lock_guard lock(mutex_);
    {
        std::ofstream out(log_path(session.session_id), std::ios::binary | std::ios::app);
        out << turn.to_json().dump() << '\n';
        out.flush();
        if (!out) throw Error(Errc::io, "cannot append to session log " + session.session_id);
    }
    session.turns.push_back(turn);
    session.updated_at = clock_();
    write_meta(session);
}

bool SessionStore::exists(const std::string& session_id) const {
    try {
        check_session_id(session_id);
    } catch (const Error&) {
        return false;
    }
    return std::filesystem::exists(meta_path(session_id));
}

SessionState SessionStore::load(const std::string& session_id) const {
    if (!exists(session_id)) throw Error(Errc::invalid_argument, "unknown session: " + session_id);
    std::lock_guard lock(mutex_);
    SessionState s;
    try {
        s = meta_from_json(nlohmann::json::parse(read_file(meta_path(session_id))));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::io, "corrupt session meta " + session_id + ": " + e.what());
    }
    std::string log = std::filesystem::exists(log_path(session_id)) ? read_file(log_path(session_id)) : "";
    std::size_t pos = 0;
    while (pos < log.size()) {
        auto nl = log.find('\n', pos);
        bool last = nl == std::string::npos;
        auto line = std::string_view(log).substr(pos, last ? std::string::npos : nl - pos);
        pos = last ? log.size() : nl + 1;
        if (trim(line).empty()) continue;
        try {
            s.turns.push_back(Turn::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception&) {
            // a torn final line from an interrupted append is dropped
            if (last) break;
            throw Error(Errc::io, "corrupt session log " + session_id);
        }
    }
    return s;
}

std::vector<SessionState> SessionStore::list(const std::string& owner) const {
    std::vector<std::string> ids;
    {
        std::lock_guard lock(mutex_);
        const std::string suffix = ".meta.json";
        for (const auto& f : std::filesystem::directory_iterator(dir_)) {
            auto name = f.path().filename().string();
            if (name.size() > suffix.size() && name.ends_with(suffix)) {
                ids.push_back(name.substr(0, name.size() - suffix.size()));
            }
        }
    }
    std::vector<SessionState> out;
    for (const auto& id : ids) {
        auto s = load(id);
        if (s.owner == owner) out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const SessionState& a, const SessionState& b) {
        if (a.updated_at != b.updated_at) return a.updated_at > b.updated_at;
        return a.session_id < b.session_id;
    });
    return out;
}

std::string SessionStore::transcript(const std::string& session_id) const {
    if (!exists(session_id)) throw Error(Errc::invalid_argument, "unknown session: " + session_id);
    std::lock_guard lock(mutex_);
    return read_file(log_path(session_id));
}

} // namespace abacus
