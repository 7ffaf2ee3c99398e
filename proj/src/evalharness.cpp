#include "abacus/evalharness.hpp"

#include "abacus/error.hpp"
#include "abacus/executor.hpp"
#include "abacus/util.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace abacus {

std::string_view to_string(DatasetFormat f) noexcept {
    switch (f) {
    case DatasetFormat::native: return "native";
    case DatasetFormat::sparc: return "sparc";
    case DatasetFormat::cosql: return "cosql";
    case DatasetFormat::chase: return "chase";
    }
    return "native";
}

DatasetFormat dataset_format_from_string(std::string_view s) {
    auto l = to_lower(s);
    if (l == "native") return DatasetFormat::native;
    if (l == "sparc") return DatasetFormat::sparc;
    if (l == "cosql") return DatasetFormat::cosql;
    if (l == "chase") return DatasetFormat::chase;
    throw Error(Errc::unknown_format, "unknown dataset format: " + std::string(s));
}

namespace {

std::string str_field(const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string()) {
        throw Error(Errc::invalid_argument, where + ": missing string field \"" + key + "\"");
    }
    return obj[key].get<std::string>();
}

EvalInteraction parse_native(const nlohmann::json& item, const std::string& where) {
    EvalInteraction it;
    it.interaction_id = str_field(item, "interaction_id", where);
    it.db_id = str_field(item, "db_id", where);
    if (!item.contains("turns") || !item["turns"].is_array()) {
        throw Error(Errc::invalid_argument, where + ": missing array field \"turns\"");
    }
    for (std::size_t k = 0; k < item["turns"].size(); ++k) {
        auto w = where + " turn " + std::to_string(k);
        it.turns.push_back({str_field(item["turns"][k], "question", w), str_field(item["turns"][k], "gold_sql", w)});
    }
    return it;
}

// SParC / CoSQL / Chase interaction layout.
EvalInteraction parse_benchmark(const nlohmann::json& item, DatasetFormat format, std::size_t index,
                                const std::string& where) {
    EvalInteraction it;
    it.db_id = str_field(item, "database_id", where);
    if (item.contains("interaction_id") && item["interaction_id"].is_string()) {
        it.interaction_id = item["interaction_id"].get<std::string>();
    } else if (item.contains("interaction_id") && item["interaction_id"].is_number_integer()) {
        it.interaction_id = std::to_string(item["interaction_id"].get<long long>());
    } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "-%04zu", index);
        it.interaction_id = std::string(to_string(format)) + buf;
    }
    if (!item.contains("interaction") || !item["interaction"].is_array()) {
        throw Error(Errc::invalid_argument, where + ": missing array field \"interaction\"");
    }
    for (std::size_t k = 0; k < item["interaction"].size(); ++k) {
        auto w = where + " turn " + std::to_string(k);
        const auto& t = item["interaction"][k];
        it.turns.push_back({str_field(t, "utterance", w), str_field(t, "query", w)});
    }
    return it;
}

} // namespace

std::vector<EvalInteraction> parse_dataset(std::string_view json_text, DatasetFormat format, const Catalog* catalog) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::invalid_argument, std::string("dataset is not valid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw Error(Errc::invalid_argument, "dataset must be a JSON array of interactions");

    std::vector<EvalInteraction> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        auto where = "interaction " + std::to_string(i);
        auto it = format == DatasetFormat::native ? parse_native(doc[i], where)
                                                  : parse_benchmark(doc[i], format, i, where);
        if (it.turns.empty()) throw Error(Errc::invalid_argument, where + ": no turns");
        if (catalog && !catalog->contains(it.db_id)) {
            throw Error(Errc::schema_mismatch, where + " references missing database " + it.db_id);
        }
        out.push_back(std::move(it));
    }
    return out;
}

std::filesystem::path resolve_dataset_file(const std::filesystem::path& path, DatasetFormat format) {
    if (!std::filesystem::is_directory(path)) return path;
    std::vector<std::string> names = format == DatasetFormat::native
                                         ? std::vector<std::string>{"interactions.json"}
                                         : std::vector<std::string>{"dev.json", "interactions.json"};
    for (const auto& n : names) {
        if (std::filesystem::is_regular_file(path / n)) return path / n;
    }
    throw Error(Errc::io, "no dataset file (" + names.front() + ") in " + path.string());
}

std::vector<EvalInteraction> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                          const Catalog* catalog) {
    return parse_dataset(read_file(resolve_dataset_file(path, format)), format, catalog);
}

nlohmann::json dataset_to_json(const std::vector<EvalInteraction>& interactions) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& it : interactions) {
        nlohmann::json turns = nlohmann::json::array();
        for (const auto& t : it.turns) turns.push_back({{"question", t.question}, {"gold_sql", t.gold_sql}});
        out.push_back({{"interaction_id", it.interaction_id}, {"db_id", it.db_id}, {"turns", std::move(turns)}});
    }
    return out;
}

std::size_t ingest_database_dir(Catalog& catalog, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::map<std::string, fs::path> found; // sorted, so ingestion order is stable
    if (fs::is_directory(dir / "database")) {
        for (const auto& d : fs::directory_iterator(dir / "database")) {
            auto id = d.path().filename().string();
            auto file = d.path() / (id + ".sqlite");
            if (d.is_directory() && fs::is_regular_file(file)) found.emplace(id, file);
        }
    }
    if (fs::is_directory(dir / "databases")) {
        for (const auto& f : fs::directory_iterator(dir / "databases")) {
            auto ext = f.path().extension().string();
            if (f.is_regular_file() && (ext == ".sqlite" || ext == ".db" || ext == ".sql")) {
                found.emplace(f.path().stem().string(), f.path());
            }
        }
    }
    std::size_t n = 0;
    for (const auto& [id, file] : found) {
        if (catalog.contains(id)) continue;
        if (file.extension() == ".sql") {
            catalog.ingest_script(read_file(file), id);
        } else {
            catalog.ingest_database(file, id);
        }
        ++n;
    }
    return n;
}

// --- report --------------------------------------------------------------------------------

nlohmann::json EvalReport::to_json() const {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& r : per_turn) {
        turns.push_back({{"interaction_id", r.interaction_id},
                         {"turn_index", r.turn_index},
                         {"counted", r.counted},
                         {"correct", r.correct},
                         {"pred_sql", r.pred_sql},
                         {"gold_sql", r.gold_sql},
                         {"error", r.error}});
    }
    return {{"qex", qex},
            {"iex", iex},
            {"turns_counted", turns_counted},
            {"interactions_counted", interactions_counted},
            {"per_turn", std::move(turns)},
            {"config", config}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    r.qex = j.at("qex").get<double>();
    r.iex = j.at("iex").get<double>();
    r.turns_counted = j.value("turns_counted", 0);
    r.interactions_counted = j.value("interactions_counted", 0);
    for (const auto& t : j.at("per_turn")) {
        r.per_turn.push_back({t.at("interaction_id").get<std::string>(), t.at("turn_index").get<int>(),
                              t.value("counted", true), t.at("correct").get<bool>(),
                              t.value("pred_sql", ""), t.value("gold_sql", ""), t.value("error", "")});
    }
    r.config = j.value("config", nlohmann::json::object());
    return r;
}

std::string EvalReport::summary(const std::string& dataset) const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-20s %8s %8s\n", "dataset", "QEX", "IEX");
    out += buf;
    std::snprintf(buf, sizeof buf, "%-20s %8.1f %8.1f\n", dataset.c_str(), qex * 100.0, iex * 100.0);
    out += buf;
    int excluded = 0;
    for (const auto& r : per_turn) excluded += r.counted ? 0 : 1;
    std::snprintf(buf, sizeof buf, "(%d turns over %d interactions counted, %d excluded for failing gold)\n",
                  turns_counted, interactions_counted, excluded);
    out += buf;
    return out;
}

void recount(EvalReport& report) {
    int counted = 0, correct = 0;
    std::map<std::string, std::pair<int, int>> by_interaction; // counted, correct
    for (const auto& r : report.per_turn) {
        if (!r.counted) continue;
        ++counted;
        correct += r.correct ? 1 : 0;
        auto& [c, k] = by_interaction[r.interaction_id];
        ++c;
        k += r.correct ? 1 : 0;
    }
    int all_correct = 0;
    for (const auto& [id, ck] : by_interaction) all_correct += ck.first == ck.second ? 1 : 0;
    report.turns_counted = counted;
    report.interactions_counted = static_cast<int>(by_interaction.size());
    report.qex = counted ? static_cast<double>(correct) / counted : 0.0;
    report.iex = by_interaction.empty() ? 0.0 : static_cast<double>(all_correct) / by_interaction.size();
}

// --- evaluation ----------------------------------------------------------------------------

namespace {

std::string session_id_for(std::size_t index, const std::string& interaction_id) {
    std::string clean;
    for (char c : interaction_id) {
        clean += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu-", index);
    return (buf + clean).substr(0, 128);
}

std::vector<TurnRecord> run_interaction(std::size_t index, const EvalInteraction& it, const PipelineDeps& deps,
                                        const EvalConfig& cfg, SessionStore* store) {
    auto entry = deps.catalog->at(it.db_id);
    SessionState session;
    auto sid = session_id_for(index, it.interaction_id);
    if (store) {
        session = store->create(sid, "eval");
    } else {
        session.session_id = sid;
    }
    if (!cfg.use_retrieval) session.db_id = it.db_id;

    std::vector<TurnRecord> records;
    for (std::size_t k = 0; k < it.turns.size(); ++k) {
        const auto& gold_turn = it.turns[k];
        auto turn = process_turn(session, gold_turn.question, deps, {}, store);

        TurnRecord rec;
        rec.interaction_id = it.interaction_id;
        rec.turn_index = static_cast<int>(k);
        rec.pred_sql = turn.final_sql;
        rec.gold_sql = gold_turn.gold_sql;

        auto gold = execute(*entry, gold_turn.gold_sql, deps.exec);
        if (!gold.ok()) {
            rec.counted = false;
            rec.error = "gold failed: " + gold.error->message;
        } else {
            if (turn.error) {
                rec.error = turn.error->stage + ": " + turn.error->message;
            } else if (!turn.result.ok()) {
                rec.error = turn.result.error->message;
            }
            // retrieval may have pinned another database; the prediction must run where the gold does
            auto pred = turn.db_id == it.db_id || !turn.result.ok() ? turn.result
                                                                    : execute(*entry, turn.final_sql, deps.exec);
            rec.correct = compare_results(pred, gold, ComparisonPolicy::for_gold(gold_turn.gold_sql));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace

EvalReport evaluate(const std::vector<EvalInteraction>& interactions, const PipelineDeps& deps, const EvalConfig& cfg,
                    SessionStore* store) {
    if (!deps.catalog || !deps.client) throw Error(Errc::invalid_argument, "evaluation needs a catalog and a client");
    for (const auto& it : interactions) {
        if (!deps.catalog->contains(it.db_id)) {
            throw Error(Errc::schema_mismatch, "interaction " + it.interaction_id + " references missing database " +
                                                   it.db_id);
        }
    }

    std::vector<std::vector<TurnRecord>> results(interactions.size());
    int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(interactions.size())));
    if (jobs == 1) {
        for (std::size_t i = 0; i < interactions.size(); ++i) {
            results[i] = run_interaction(i, interactions[i], deps, cfg, store);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> workers;
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < interactions.size();) {
                    try {
                        results[i] = run_interaction(i, interactions[i], deps, cfg, store);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : workers) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    EvalReport report;
    for (auto& r : results) {
        for (auto& rec : r) report.per_turn.push_back(std::move(rec));
    }
    recount(report);

    auto gen = deps.generation;
    report.config = {
        {"dataset", cfg.dataset_name},
        {"model", deps.client->model_name()},
        {"pipeline", deps.cfg.to_json()},
        {"retrieval",
         {{"beam_width", deps.retrieval.beam_width},
          {"max_hops", deps.retrieval.max_hops},
          {"tables_per_hop", deps.retrieval.tables_per_hop},
          {"aggregation", deps.retrieval.aggregation == ScoreAggregation::sum ? "sum" : "max"}}},
        {"generation", {{"temperature", gen.temperature}, {"max_tokens", gen.max_tokens}}},
        {"use_retrieval", cfg.use_retrieval},
        {"pool_size", deps.pool ? deps.pool->size() : 0},
    };
    return report;
}

} // namespace abacus
