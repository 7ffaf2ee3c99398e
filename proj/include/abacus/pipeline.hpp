#pragma once

#include "abacus/catalog.hpp"
#include "abacus/demopool.hpp"
#include "abacus/executor.hpp"
#include "abacus/llm.hpp"
#include "abacus/prompts.hpp"
#include "abacus/retrieval.hpp"
#include "abacus/sqlkit.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace abacus {

struct PipelineConfig {
    int n_shot = 3;
    int max_debug_iters = 3;
    bool enable_pre_sql = true;
    bool enable_self_debug = true;
    bool retrieval_per_turn = false;

    void validate() const;
    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
};

struct DebugStep {
    std::string sql;
    std::string error;
    bool operator==(const DebugStep&) const = default;
};

/// A failure that ended a turn early. `stage` names the pipeline step.
struct TurnError {
    std::string stage;
    std::string code;
    std::string message;
};

struct Turn {
    std::string question;
    std::string db_id;
    std::optional<RetrievalResult> retrieval; ///< present when retrieval ran for this turn
    std::vector<std::string> demo_ids;
    std::optional<std::string> pre_sql;
    std::optional<sql::TableRefSet> filtered_tables;
    bool pre_sql_fallback = false; ///< Pre-SQL ran but the full schema was kept
    std::string final_sql;
    std::vector<DebugStep> debug_trace;
    ExecutionResult result;
    std::optional<TurnError> error;

    nlohmann::json to_json() const;
    static Turn from_json(const nlohmann::json& j);
};

struct SessionState {
    std::string session_id;
    std::string owner;
    std::string db_id; ///< empty until the first turn pins it
    std::vector<Turn> turns;
    std::int64_t created_at = 0;
    std::int64_t updated_at = 0;

    nlohmann::json meta_json() const;
};

struct PromptBundle {
    std::vector<llm::ChatMessage> messages;
};

/// System message, one user/assistant pair per demo turn, then one user message
/// carrying schema, dialogue history and the question.
PromptBundle build_prompt(const SessionState& session, const std::string& schema_text,
                          const std::vector<Demonstration>& demos, const std::string& question,
                          const PromptTemplates& prompts, const std::string& system_text);
PromptBundle build_prompt(const SessionState& session, const std::string& schema_text,
                          const std::vector<Demonstration>& demos, const std::string& question,
                          const PromptTemplates& prompts = PromptTemplates::defaults());

/// First fenced code block, else the first statement starting at SELECT/WITH.
/// Throws Errc::no_sql_found.
std::string extract_sql(std::string_view model_output);

/// Everything a turn needs besides the session itself.
struct PipelineDeps {
    const Catalog* catalog = nullptr;
    const DemoPool* pool = nullptr;
    llm::Client* client = nullptr;
    const TableScorer* scorer = nullptr;
    PipelineConfig cfg;
    RetrievalConfig retrieval;
    llm::GenerationParams generation;
    PromptTemplates prompts = PromptTemplates::defaults();
    ExecuteOptions exec;
};

struct PreSqlOutcome {
    std::string schema_text;
    std::optional<std::string> pre_sql;
    std::optional<sql::TableRefSet> filtered_tables;
    bool fallback = false;
};

/// Drafts SQL over the full schema and narrows the schema to the tables it
/// references plus their direct foreign-key neighbours. Falls back to the full
/// schema when nothing usable is referenced. LLM failures propagate.
PreSqlOutcome pre_sql_filter(const SessionState& session, const DatabaseEntry& entry,
                             const std::vector<Demonstration>& demos, const std::string& question,
                             llm::Client& client, const PipelineDeps& deps);

struct DebugOutcome {
    std::string final_sql;
    std::vector<DebugStep> trace;
    ExecutionResult result;
    std::optional<TurnError> error; ///< LLM failure that cut the loop short
};

/// Execute; on error feed error, schema, question and SQL back to the model and
/// retry with its answer, at most `max_debug_iters` times.
DebugOutcome self_debug(const std::string& sql_text, const DatabaseEntry& entry, const std::string& question,
                        const std::string& schema_text, llm::Client& client, const PipelineDeps& deps);

/// Receives progress while a turn runs.
struct TurnObserver {
    std::function<void(const std::string& stage, const nlohmann::json& payload)> on_stage;
    std::function<void(std::string_view token)> on_token;
};

class SessionStore;

/// Runs one turn end to end, appends it to `session`, and persists it to
/// `store` (when given) before returning.
Turn process_turn(SessionState& session, const std::string& question, const PipelineDeps& deps,
                  const TurnObserver& observer = {}, SessionStore* store = nullptr);

/// File-backed sessions: `<dir>/<id>.meta.json` plus `<dir>/<id>.jsonl` with one
/// Turn per line, appended before a turn is acknowledged.
class SessionStore {
public:
    using Clock = std::function<std::int64_t()>;

    explicit SessionStore(std::filesystem::path dir, Clock clock = {});

    SessionState create(const std::string& session_id, const std::string& owner);
    void append_turn(SessionState& session, const Turn& turn);
    /// Throws Errc::invalid_argument if the session does not exist.
    SessionState load(const std::string& session_id) const;
    bool exists(const std::string& session_id) const;
    std::vector<SessionState> list(const std::string& owner) const;
    std::string transcript(const std::string& session_id) const;

private:
    std::filesystem::path meta_path(const std::string& id) const;
    std::filesystem::path log_path(const std::string& id) const;
    void write_meta(const SessionState& s) const;

    std::filesystem::path dir_;
    Clock clock_;
    mutable std::mutex mutex_;
};

} // namespace abacus
