#include "abacus/retrieval.hpp"

#include "abacus/bm25.hpp"
#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

namespace abacus {

void RetrievalConfig::validate() const {
    if (beam_width <= 0 || max_hops <= 0 || tables_per_hop <= 0) {
        throw Error(Errc::invalid_argument, "beam_width, max_hops and tables_per_hop must be positive");
    }
}

std::string table_document(const TableSchema& table) {
    std::string text = table.name;
    for (const auto& c : table.columns) text += " " + c.name + " " + c.declared_type;
    return text;
}

namespace {

bool ranked_before(const ScoredTable& a, const ScoredTable& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.db_id != b.db_id) return a.db_id < b.db_id;
    return a.table_name < b.table_name;
}

struct TableRef {
    std::string db_id;
    std::string table_name;
    const TableSchema* schema;
};

std::vector<TableRef> all_tables(const Catalog& catalog,
                                 std::vector<std::shared_ptr<const DatabaseEntry>>& keepalive) {
    keepalive = catalog.entries();
    if (keepalive.empty()) throw Error(Errc::empty_catalog, "catalog has no databases");
    std::vector<TableRef> out;
    for (const auto& e : keepalive) {
        for (const auto& t : e->tables) out.push_back({e->db_id, t.name, &t});
    }
    return out;
}

} // namespace

std::vector<ScoredTable> Bm25TableScorer::score_tables(std::string_view query, const Catalog& catalog) const {
    std::vector<std::shared_ptr<const DatabaseEntry>> keepalive;
    auto tables = all_tables(catalog, keepalive);
    std::vector<std::vector<std::string>> docs;
    docs.reserve(tables.size());
    for (const auto& t : tables) docs.push_back(bm25::tokenize(table_document(*t.schema)));
    auto stats = bm25::CorpusStats::build(docs);
    auto q = bm25::strip_plurals(bm25::tokenize(query), stats);

    std::vector<ScoredTable> out;
    out.reserve(tables.size());
    for (std::size_t i = 0; i < tables.size(); ++i) {
        out.push_back({tables[i].db_id, tables[i].table_name, bm25::score(q, docs[i], stats)});
    }
    std::sort(out.begin(), out.end(), ranked_before);
    return out;
}

std::vector<std::vector<double>> HttpEmbedder::embed(const std::vector<std::string>& texts) {
    std::string url = config_.base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(Errc::invalid_argument, "base_url needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    std::string host = url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : url.substr(path_start);

    httplib::Client cli(host);
    cli.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    nlohmann::json body = {{"model", config_.model_name}, {"input", texts}};
    auto res = cli.Post(prefix + "/embeddings", headers, body.dump(), "application/json");
    if (!res) throw Error(Errc::llm_transport, "embedding request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw Error(Errc::llm_transport, "embedding HTTP " + std::to_string(res->status), res->status);
    }
    try {
        auto j = nlohmann::json::parse(res->body);
        std::vector<std::vector<double>> out(texts.size());
        for (const auto& item : j.at("data")) {
            auto idx = item.value("index", static_cast<std::size_t>(0));
            if (idx >= out.size()) throw Error(Errc::llm_bad_response, "embedding index out of range");
            out[idx] = item.at("embedding").get<std::vector<double>>();
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::llm_bad_response, std::string("unparseable embedding response: ") + e.what());
    }
}

std::vector<ScoredTable> EmbeddingTableScorer::score_tables(std::string_view query, const Catalog& catalog) const {
    std::vector<std::shared_ptr<const DatabaseEntry>> keepalive;
    auto tables = all_tables(catalog, keepalive);
    std::vector<std::string> texts{std::string(query)};
    for (const auto& t : tables) texts.push_back(table_document(*t.schema));
    auto vecs = embedder_->embed(texts);
    if (vecs.size() != texts.size()) throw Error(Errc::llm_bad_response, "embedding count mismatch");

    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size() || a.empty()) return 0.0;
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0;
    };
    std::vector<ScoredTable> out;
    for (std::size_t i = 0; i < tables.size(); ++i) {
        out.push_back({tables[i].db_id, tables[i].table_name, std::max(0.0, cosine(vecs[0], vecs[i + 1]))});
    }
    std::sort(out.begin(), out.end(), ranked_before);
    return out;
}

std::optional<std::string> rewrite_remove(const std::string& query, const std::vector<ScoredTable>& chosen,
                                          const Catalog& catalog, llm::Client& client,
                                          const std::string& rewrite_template) {
    if (chosen.empty()) return query;
    std::string tables;
    for (const auto& t : chosen) {
        tables += "- " + t.db_id + "." + t.table_name;
        if (auto entry = catalog.find(t.db_id)) {
            if (const auto* schema = entry->find_table(t.table_name)) {
                tables += " (";
                for (std::size_t i = 0; i < schema->columns.size(); ++i) {
                    tables += (i ? ", " : "") + schema->columns[i].name;
                }
                tables += ")";
            }
        }
        tables += "\n";
    }
    std::vector<llm::ChatMessage> messages = {
        {llm::Role::system, "You rewrite database questions to remove parts that are already answered."},
        {llm::Role::user, render_template(rewrite_template, {{"query", query}, {"tables", tables}})},
    };
    auto reply = std::string(trim(client.complete(messages)));
    if (reply.empty() || reply == kStopMarker) return std::nullopt;
    return reply;
}

nlohmann::json RetrievalResult::to_json() const {
    nlohmann::json dbs = nlohmann::json::array();
    for (const auto& d : databases) dbs.push_back({{"db_id", d.db_id}, {"score", d.score}, {"tables", d.tables}});
    return {{"databases", std::move(dbs)}};
}

RetrievalResult RetrievalResult::from_json(const nlohmann::json& j) {
    RetrievalResult r;
    for (const auto& d : j.at("databases")) {
        r.databases.push_back({d.at("db_id").get<std::string>(), d.at("score").get<double>(),
                               d.at("tables").get<std::vector<std::string>>()});
    }
    return r;
}

namespace {

double aggregate(ScoreAggregation agg, double acc, double score) {
    return agg == ScoreAggregation::sum ? acc + score : std::max(acc, score);
}

bool state_before(const BeamState& a, const BeamState& b) {
    if (a.cum_score != b.cum_score) return a.cum_score > b.cum_score;
    return std::lexicographical_compare(
        a.chosen.begin(), a.chosen.end(), b.chosen.begin(), b.chosen.end(), [](const auto& x, const auto& y) {
            return std::tie(x.db_id, x.table_name) < std::tie(y.db_id, y.table_name);
        });
}

bool already_chosen(const BeamState& s, const ScoredTable& t) {
    return std::any_of(s.chosen.begin(), s.chosen.end(),
                       [&](const auto& c) { return c.db_id == t.db_id && c.table_name == t.table_name; });
}

} // namespace

RetrievalResult murre_retrieve(const std::string& query, const Catalog& catalog, const RetrievalConfig& cfg,
                               llm::Client& client, const TableScorer& scorer, const std::string& rewrite_template) {
    cfg.validate();
    if (catalog.empty()) throw Error(Errc::empty_catalog, "catalog has no databases");

    RetrievalResult result;
    std::vector<BeamState> active{BeamState{query, {}, 0.0, 0}};
    for (int hop = 1; hop <= cfg.max_hops && !active.empty(); ++hop) {
        std::vector<BeamState> children;
        std::vector<std::string> parent_residual;
        for (const auto& state : active) {
            auto ranked = scorer.score_tables(state.residual_query, catalog);
            int taken = 0;
            for (const auto& t : ranked) {
                if (taken == cfg.tables_per_hop) break;
                if (already_chosen(state, t)) continue;
                BeamState child = state;
                child.chosen.push_back(t);
                child.cum_score = aggregate(cfg.aggregation, state.cum_score, t.score);
                child.hop = hop;
                children.push_back(std::move(child));
                ++taken;
            }
            // every table already chosen: the state cannot grow
            if (taken == 0 && !state.chosen.empty()) result.finished.push_back(state);
        }
        std::stable_sort(children.begin(), children.end(), state_before);
        if (children.size() > static_cast<std::size_t>(cfg.beam_width)) {
            children.resize(static_cast<std::size_t>(cfg.beam_width));
        }

        std::vector<BeamState> next;
        for (auto& child : children) {
            if (hop == cfg.max_hops) {
                result.finished.push_back(std::move(child));
                continue;
            }
            auto residual = rewrite_remove(child.residual_query, {child.chosen.back()}, catalog, client,
                                           rewrite_template);
            if (!residual) {
                result.finished.push_back(std::move(child));
            } else {
                child.residual_query = std::move(*residual);
                next.push_back(std::move(child));
            }
        }
        active = std::move(next);
    }

    std::map<std::string, double> db_score;
    std::map<std::string, std::map<std::string, double>> db_tables;
    for (const auto& state : result.finished) {
        std::map<std::string, double> group;
        for (const auto& t : state.chosen) {
            auto [it, fresh] = group.try_emplace(t.db_id, t.score);
            if (!fresh) it->second = aggregate(cfg.aggregation, it->second, t.score);
            auto [tt, tfresh] = db_tables[t.db_id].try_emplace(t.table_name, t.score);
            if (!tfresh) tt->second = std::max(tt->second, t.score);
        }
        for (const auto& [db, score] : group) {
            auto [it, fresh] = db_score.try_emplace(db, score);
            if (!fresh) it->second = std::max(it->second, score);
        }
    }
    for (const auto& [db, score] : db_score) {
        RankedDatabase rd{db, score, {}};
        std::vector<std::pair<std::string, double>> tables(db_tables[db].begin(), db_tables[db].end());
        std::stable_sort(tables.begin(), tables.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        for (auto& [name, _] : tables) rd.tables.push_back(name);
        result.databases.push_back(std::move(rd));
    }
    std::stable_sort(result.databases.begin(), result.databases.end(),
                     [](const auto& a, const auto& b) { return a.score > b.score; });
    return result;
}

std::string select_database(const std::vector<RankedDatabase>& ranked) {
    if (ranked.empty()) throw Error(Errc::no_candidates, "no candidate databases");
    const RankedDatabase* best = &ranked.front();
    for (const auto& r : ranked) {
        if (r.score > best->score || (r.score == best->score && r.db_id < best->db_id)) best = &r;
    }
    return best->db_id;
}

} // namespace abacus
