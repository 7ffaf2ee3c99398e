#pragma once

#include "abacus/bm25.hpp"
#include "abacus/catalog.hpp"
#include "abacus/executor.hpp"
#include "abacus/llm.hpp"
#include "abacus/sqlkit.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace abacus {

enum class DemoSource { seed, synthesized };

struct DemoTurn {
    std::string question;
    std::string sql;
    bool operator==(const DemoTurn&) const = default;
};

/// A 1-3 turn mini-dialogue used as a few-shot example.
struct Demonstration {
    std::string demo_id;
    std::string db_id;
    std::vector<DemoTurn> turns;
    DemoSource source = DemoSource::seed;
    sql::KeywordSignature signature; ///< of the final turn's SQL

    static Demonstration make(std::string demo_id, std::string db_id, std::vector<DemoTurn> turns,
                              DemoSource source = DemoSource::seed);
    bool operator==(const Demonstration&) const = default;
};

class DemoPool;

/// Union with `accepted`, index rebuilt. Table names for new databases come
/// from `catalog` when given.
DemoPool update_pool(const DemoPool& pool, const std::vector<Demonstration>& accepted,
                     const Catalog* catalog = nullptr);

/// Demonstrations plus the BM25 index used to select among them. Each indexed
/// document is the demo's turn questions followed by its database's table names.
class DemoPool {
public:
    DemoPool() = default;

    /// Table names come from `schema_catalog` when given; otherwise the document
    /// holds question text only.
    static DemoPool build(std::vector<Demonstration> demos, const Catalog* schema_catalog = nullptr);

    const std::vector<Demonstration>& demos() const { return demos_; }
    const bm25::CorpusStats& corpus_stats() const { return stats_; }
    const std::vector<std::string>& document(std::size_t i) const { return docs_.at(i); }
    std::size_t size() const { return demos_.size(); }
    bool empty() const { return demos_.empty(); }
    const Demonstration* find(std::string_view demo_id) const;
    const std::map<std::string, std::vector<std::string>>& table_names() const { return table_names_; }

private:
    friend DemoPool update_pool(const DemoPool&, const std::vector<Demonstration>&, const Catalog*);

    std::vector<Demonstration> demos_;
    std::vector<std::vector<std::string>> docs_;
    bm25::CorpusStats stats_;
    std::map<std::string, std::vector<std::string>> table_names_;
};

// --- persistence -------------------------------------------------------------------

nlohmann::json to_json(const Demonstration& demo);
nlohmann::json pool_to_json(const DemoPool& pool);
std::string pool_to_text(const DemoPool& pool);

/// Parses and validates a pool file or upload: a JSON array of
/// {demo_id, db_id, turns: [{question, sql}], source}. The whole file is rejected
/// on the first problem with Errc::invalid_upload and a message naming the entry
/// index and line. When `catalog` is given every db_id must resolve in it.
std::vector<Demonstration> parse_pool(std::string_view text, const Catalog* catalog = nullptr);

DemoPool load_pool(const std::filesystem::path& path, const Catalog* catalog = nullptr);
void save_pool(const DemoPool& pool, const std::filesystem::path& path);

// --- selection -------------------------------------------------------------------------

struct RankedDemo {
    std::size_t index;
    double score;
};

/// Every demo scored against history + question, descending, ties by demo_id.
std::vector<RankedDemo> rank_demos(std::string_view question, const std::vector<std::string>& history,
                                   const DemoPool& pool);

std::vector<Demonstration> select_demos(std::string_view question, const std::vector<std::string>& history,
                                        const DemoPool& pool, int n);

// --- augmentation ----------------------------------------------------------------------

struct FusedConfig {
    int rounds = 2;
    int fusion_arity = 2;
    int additions_cap = 16;
    std::uint64_t random_seed = 0;
};

/// Partition by keyword-presence signature (nested-subquery count kept exact).
/// Largest cluster first, then by signature.
std::vector<std::vector<std::string>> cluster_pool(const DemoPool& pool);

/// Samples demos across clusters, asks the LLM to fuse them into a new
/// (question, SQL) pair over a randomly chosen catalog database, and parses the
/// replies. Unparseable replies are skipped.
std::vector<Demonstration> fuse_round(const DemoPool& pool, const Catalog& catalog, llm::Client& client,
                                      const FusedConfig& cfg, std::mt19937_64& rng,
                                      const std::string& fusion_template);

enum class RejectReason { untokenizable, unparseable, unknown_database, unknown_table, execution_error, duplicate };
std::string_view to_string(RejectReason r) noexcept;

struct Verdict {
    bool accepted = false;
    RejectReason reason = RejectReason::duplicate;
    std::string detail;
};

Verdict verify_demo(const Demonstration& demo, const Catalog& catalog, const DemoPool& pool,
                    const ExecuteOptions& exec = {});

struct AugmentSummary {
    int candidates = 0;
    int accepted = 0;
    std::map<std::string, int> rejected; ///< reason -> count

    nlohmann::json to_json() const;
};

/// Runs `cfg.rounds` fuse/verify/update rounds. The returned pool is never
/// smaller than the input.
std::pair<DemoPool, AugmentSummary> augment_pool(const DemoPool& pool, const Catalog& catalog, llm::Client& client,
                                                 const FusedConfig& cfg, const std::string& fusion_template);

} // namespace abacus
