#pragma once

// Synthetic catalogs and stand-in rewriters for multi-hop retrieval checks.

#include "abacus/catalog.hpp"
#include "abacus/llm.hpp"
#include "abacus/prompts.hpp"
#include "abacus/retrieval.hpp"

#include "oracles.hpp"

#include <map>
#include <memory>
#include <random>
#include <regex>
#include <string>
#include <vector>

namespace abacus::testing::murre {

namespace llm = abacus::llm;

inline const std::string& rewrite_template() {
    static const std::string t = abacus::PromptTemplates::defaults().rewrite;
    return t;
}

// Drops query words naming the removed table (with or without a plural "s").
// Nothing left means stop.
inline std::string drop_table_words(const std::string& query, const std::string& table) {
    std::string out;
    for (const auto& w : oracle::ascii_words(query)) {
        if (w == table || w == table + "s") continue;
        out += (out.empty() ? "" : " ") + w;
    }
    return out.empty() ? std::string(abacus::kStopMarker) : out;
}

// Stands in for the LLM rewriter with drop_table_words.
class WordDropRewriter final : public llm::Client {
public:
    std::string model_name() const override { return "word-drop"; }
    int calls = 0;

protected:
    std::string do_complete(std::span<const llm::ChatMessage> messages, const llm::GenerationParams&,
                            const llm::ChunkConsumer& on_chunk) override {
        ++calls;
        const auto& text = messages.back().content;
        std::smatch q, t;
        std::regex_search(text, q, std::regex("Question: ([^\\n]*)"));
        std::regex_search(text, t, std::regex("- [^.\\n]+\\.([A-Za-z0-9_]+)"));
        auto reply = drop_table_words(q[1].str(), t[1].str());
        if (on_chunk) on_chunk(reply);
        return reply;
    }
};

class StopRewriter final : public llm::Client {
public:
    std::string model_name() const override { return "stop"; }

protected:
    std::string do_complete(std::span<const llm::ChatMessage>, const llm::GenerationParams&,
                            const llm::ChunkConsumer&) override {
        return std::string(abacus::kStopMarker);
    }
};

struct TableSpec {
    std::string name;
    std::vector<std::string> columns;
};
using DbSpec = std::map<std::string, std::vector<TableSpec>>;

inline std::unique_ptr<abacus::Catalog> build_catalog(const DbSpec& spec) {
    auto catalog = std::make_unique<abacus::Catalog>();
    for (const auto& [db, tables] : spec) {
        std::string ddl;
        for (const auto& t : tables) {
            ddl += "CREATE TABLE \"" + t.name + "\" (";
            for (std::size_t i = 0; i < t.columns.size(); ++i) ddl += (i ? ", \"" : "\"") + t.columns[i] + "\" TEXT";
            ddl += ");\n";
        }
        catalog->ingest_script(ddl, db);
    }
    return catalog;
}

inline std::vector<oracle::TableDoc> table_docs(const DbSpec& spec) {
    std::vector<oracle::TableDoc> docs;
    for (const auto& [db, tables] : spec) {
        for (const auto& t : tables) {
            std::string text = t.name;
            for (const auto& c : t.columns) text += " " + c + " TEXT";
            docs.push_back({db, t.name, oracle::ascii_words(text)});
        }
    }
    return docs;
}

inline std::vector<double> oracle_table_scores(const std::string& query, const std::vector<oracle::TableDoc>& docs) {
    std::vector<std::vector<std::string>> words;
    for (const auto& d : docs) words.push_back(d.tokens);
    return oracle::bm25_scores(oracle::depluralize(oracle::ascii_words(query), words), words);
}

inline const std::vector<std::string>& random_vocab() {
    static const std::vector<std::string> v = {"singer", "stadium", "concert", "team", "city", "pet", "student",
                                               "age", "name", "year", "budget", "salary"};
    return v;
}

// 2-4 databases, at most 10 tables in total, words drawn from a small shared vocabulary.
inline DbSpec random_db_spec(std::mt19937& rng) {
    const auto& vocab = random_vocab();
    DbSpec spec;
    int tables_total = 0;
    int n_db = 2 + static_cast<int>(rng() % 3);
    for (int d = 0; d < n_db && tables_total < 10; ++d) {
        auto& tables = spec["db" + std::to_string(d)];
        int n_t = 1 + static_cast<int>(rng() % 3);
        for (int t = 0; t < n_t && tables_total < 10; ++t, ++tables_total) {
            TableSpec ts{vocab[rng() % vocab.size()] + "_" + std::to_string(t), {}};
            int n_c = 1 + static_cast<int>(rng() % 3);
            for (int c = 0; c < n_c; ++c) ts.columns.push_back(vocab[rng() % vocab.size()] + std::to_string(c));
            tables.push_back(ts);
        }
    }
    return spec;
}

// Three vocabulary words, some pluralized.
inline std::string random_query(std::mt19937& rng) {
    const auto& vocab = random_vocab();
    std::string q;
    for (int w = 0; w < 3; ++w) q += vocab[rng() % vocab.size()] + (rng() % 2 ? "s " : " ");
    return q;
}

} // namespace abacus::testing::murre
