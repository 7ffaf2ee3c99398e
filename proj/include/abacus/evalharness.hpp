#pragma once

#include "abacus/catalog.hpp"
#include "abacus/pipeline.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace abacus {

struct EvalTurn {
    std::string question;
    std::string gold_sql;
    bool operator==(const EvalTurn&) const = default;
};

struct EvalInteraction {
    std::string interaction_id;
    std::string db_id;
    std::vector<EvalTurn> turns;
    bool operator==(const EvalInteraction&) const = default;
};

enum class DatasetFormat { native, sparc, cosql, chase };

std::string_view to_string(DatasetFormat f) noexcept;
/// Throws Errc::unknown_format.
DatasetFormat dataset_format_from_string(std::string_view s);

/// Parses interaction JSON. SParC, CoSQL and Chase share the layout
/// [{database_id, interaction: [{utterance, query}]}]; native is the JSON mirror
/// of EvalInteraction. When `catalog` is given every db_id must resolve
/// (Errc::schema_mismatch otherwise).
std::vector<EvalInteraction> parse_dataset(std::string_view json_text, DatasetFormat format,
                                           const Catalog* catalog = nullptr);

/// `path` is the dataset file, or a directory holding `interactions.json`
/// (native) or `dev.json` (the benchmark formats).
std::vector<EvalInteraction> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                          const Catalog* catalog = nullptr);

std::filesystem::path resolve_dataset_file(const std::filesystem::path& path, DatasetFormat format);

/// Native JSON for a list of interactions.
nlohmann::json dataset_to_json(const std::vector<EvalInteraction>& interactions);

/// Registers the databases found under `dir`: the Spider layout
/// `database/<id>/<id>.sqlite`, plus `databases/<id>.{sqlite,db,sql}`.
/// SQL scripts are materialized into `catalog`'s storage.
std::size_t ingest_database_dir(Catalog& catalog, const std::filesystem::path& dir);

struct TurnRecord {
    std::string interaction_id;
    int turn_index = 0;
    bool counted = true; ///< false when the gold SQL failed to execute
    bool correct = false;
    std::string pred_sql;
    std::string gold_sql;
    std::string error;
};

struct EvalReport {
    double qex = 0.0;
    double iex = 0.0;
    int turns_counted = 0;
    int interactions_counted = 0;
    std::vector<TurnRecord> per_turn;
    nlohmann::json config;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    /// One line: dataset, QEX, IEX (percent).
    std::string summary(const std::string& dataset) const;
};

struct EvalConfig {
    /// Route each interaction through retrieval instead of pinning its db_id.
    bool use_retrieval = false;
    /// Interactions evaluated concurrently. Scripted sequence mocks need 1.
    int jobs = 1;
    std::string dataset_name;
};

/// Fresh session per interaction; a turn is correct when its prediction's
/// result matches the gold's under the gold's ORDER BY policy. Turns whose gold
/// fails to execute are excluded from both metrics and logged in the record.
/// Transcripts go to `store` when given.
EvalReport evaluate(const std::vector<EvalInteraction>& interactions, const PipelineDeps& deps,
                    const EvalConfig& cfg, SessionStore* store = nullptr);

/// qex/iex recomputed from per-turn records.
void recount(EvalReport& report);

} // namespace abacus
