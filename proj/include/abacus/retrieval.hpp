#pragma once

#include "abacus/catalog.hpp"
#include "abacus/llm.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace abacus {

struct ScoredTable {
    std::string db_id;
    std::string table_name;
    double score = 0.0;
    bool operator==(const ScoredTable&) const = default;
};

enum class ScoreAggregation { sum, max };

struct RetrievalConfig {
    int beam_width = 4;
    int max_hops = 3;
    int tables_per_hop = 4;
    ScoreAggregation aggregation = ScoreAggregation::sum;

    void validate() const;
};

/// Relevance of every catalog table to a query.
class TableScorer {
public:
    virtual ~TableScorer() = default;
    /// Descending by score, ties by (db_id, table_name). Throws empty_catalog.
    virtual std::vector<ScoredTable> score_tables(std::string_view query, const Catalog& catalog) const = 0;
};

/// Text a table is scored by: its name, column names and declared types.
std::string table_document(const TableSchema& table);

/// Lexical BM25 over table documents with the plural-strip rule on query tokens.
class Bm25TableScorer final : public TableScorer {
public:
    std::vector<ScoredTable> score_tables(std::string_view query, const Catalog& catalog) const override;
};

/// Produces one vector per input text.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

/// OpenAI-compatible /embeddings endpoint.
class HttpEmbedder final : public Embedder {
public:
    explicit HttpEmbedder(llm::EndpointConfig config) : config_(std::move(config)) {}
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

private:
    llm::EndpointConfig config_;
};

/// Cosine similarity between query and table-document embeddings, clamped at zero.
class EmbeddingTableScorer final : public TableScorer {
public:
    explicit EmbeddingTableScorer(std::shared_ptr<Embedder> embedder) : embedder_(std::move(embedder)) {}
    std::vector<ScoredTable> score_tables(std::string_view query, const Catalog& catalog) const override;

private:
    std::shared_ptr<Embedder> embedder_;
};

inline constexpr std::string_view kStopMarker = "<DONE>";

/// Asks the LLM to strip what `chosen` already covers from `query`. Returns
/// nullopt (stop) when the reply is empty or the stop marker. With nothing
/// chosen the query comes back unchanged and the LLM is not called.
std::optional<std::string> rewrite_remove(const std::string& query, const std::vector<ScoredTable>& chosen,
                                          const Catalog& catalog, llm::Client& client,
                                          const std::string& rewrite_template);

struct BeamState {
    std::string residual_query;
    std::vector<ScoredTable> chosen;
    double cum_score = 0.0;
    int hop = 0;
};

struct RankedDatabase {
    std::string db_id;
    double score = 0.0;
    std::vector<std::string> tables; ///< chosen tables of this database, best first
};

struct RetrievalResult {
    std::vector<RankedDatabase> databases; ///< descending score, ties by db_id
    std::vector<BeamState> finished;       ///< halted beam states, for inspection

    /// Ranking only; `finished` is not serialized.
    nlohmann::json to_json() const;
    static RetrievalResult from_json(const nlohmann::json& j);
};

/// Multi-hop beam search over tables, alternating retrieval and LLM removal,
/// followed by per-database grouping and ranking.
RetrievalResult murre_retrieve(const std::string& query, const Catalog& catalog, const RetrievalConfig& cfg,
                               llm::Client& client, const TableScorer& scorer, const std::string& rewrite_template);

/// Highest score, ties to the lexicographically smallest db_id. Throws no_candidates.
std::string select_database(const std::vector<RankedDatabase>& ranked);

} // namespace abacus
