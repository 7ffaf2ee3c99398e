#include "abacus/demopool.hpp"

#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <algorithm>
#include <regex>
#include <set>

namespace abacus {

Demonstration Demonstration::make(std::string demo_id, std::string db_id, std::vector<DemoTurn> turns,
                                  DemoSource source) {
    Demonstration d;
    d.demo_id = std::move(demo_id);
    d.db_id = std::move(db_id);
    d.turns = std::move(turns);
    d.source = source;
    if (!d.turns.empty()) d.signature = sql::keyword_signature(d.turns.back().sql);
    return d;
}

DemoPool DemoPool::build(std::vector<Demonstration> demos, const Catalog* schema_catalog) {
    DemoPool pool;
    if (schema_catalog) {
        for (const auto& d : demos) {
            if (pool.table_names_.count(d.db_id)) continue;
            if (auto entry = schema_catalog->find(d.db_id)) pool.table_names_[d.db_id] = entry->table_names();
        }
    }
    return update_pool(pool, demos, nullptr);
}

const Demonstration* DemoPool::find(std::string_view demo_id) const {
    auto it = std::find_if(demos_.begin(), demos_.end(), [&](const auto& d) { return d.demo_id == demo_id; });
    return it == demos_.end() ? nullptr : &*it;
}

DemoPool update_pool(const DemoPool& pool, const std::vector<Demonstration>& accepted, const Catalog* catalog) {
    DemoPool next;
    next.demos_ = pool.demos_;
    next.table_names_ = pool.table_names_;
    std::set<std::string> ids;
    for (const auto& d : next.demos_) ids.insert(d.demo_id);
    for (const auto& d : accepted) {
        if (!ids.insert(d.demo_id).second) {
            throw Error(Errc::invalid_argument, "duplicate demo_id '" + d.demo_id + "'");
        }
        next.demos_.push_back(d);
        if (catalog && !next.table_names_.count(d.db_id)) {
            if (auto entry = catalog->find(d.db_id)) next.table_names_[d.db_id] = entry->table_names();
        }
    }
    next.docs_.clear();
    for (const auto& d : next.demos_) {
        std::string text;
        for (const auto& t : d.turns) text += t.question + " ";
        if (auto it = next.table_names_.find(d.db_id); it != next.table_names_.end()) {
            for (const auto& name : it->second) text += name + " ";
        }
        next.docs_.push_back(bm25::tokenize(text));
    }
    next.stats_ = bm25::CorpusStats::build(next.docs_);
    return next;
}

// --- persistence ---------------------------------------------------------------------

namespace {

std::string_view source_name(DemoSource s) { return s == DemoSource::seed ? "seed" : "synthesized"; }

// Byte offsets where each top-level array element begins.
std::vector<std::size_t> element_offsets(std::string_view text) {
    std::vector<std::size_t> out;
    int depth = 0;
    bool in_string = false;
    bool escape = false;
    bool expecting = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escape) escape = false;
            else if (c == '\\') escape = true;
            else if (c == '"') in_string = false;
            continue;
        }
        bool space = c == ' ' || c == '\n' || c == '\r' || c == '\t';
        if (depth == 1 && expecting && !space && c != ']') {
            out.push_back(i);
            expecting = false;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '[' || c == '{') {
            ++depth;
            if (depth == 1 && c == '[') expecting = true;
        } else if (c == ']' || c == '}') {
            --depth;
        } else if (c == ',' && depth == 1) {
            expecting = true;
        }
    }
    return out;
}

} // namespace

nlohmann::json to_json(const Demonstration& demo) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : demo.turns) turns.push_back({{"question", t.question}, {"sql", t.sql}});
    return {{"demo_id", demo.demo_id}, {"db_id", demo.db_id}, {"turns", std::move(turns)},
            {"source", source_name(demo.source)}};
}

nlohmann::json pool_to_json(const DemoPool& pool) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : pool.demos()) arr.push_back(to_json(d));
    return arr;
}

std::string pool_to_text(const DemoPool& pool) { return pool_to_json(pool).dump(2) + "\n"; }

std::vector<Demonstration> parse_pool(std::string_view text, const Catalog* catalog) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::invalid_upload,
                    "line " + std::to_string(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                        ": malformed JSON (" + e.what() + ")");
    }
    if (!doc.is_array()) throw Error(Errc::invalid_upload, "line 1: demonstration file must be a JSON array");

    auto offsets = element_offsets(text);
    std::vector<Demonstration> demos;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& e = doc[i];
        std::size_t line = i < offsets.size() ? line_of_offset(text, offsets[i]) : 0;
        auto fail = [&](const std::string& what) -> void {
            throw Error(Errc::invalid_upload,
                        "entry " + std::to_string(i) + " (line " + std::to_string(line) + "): " + what);
        };
        auto string_field = [&](const nlohmann::json& obj, const char* key, const std::string& where) {
            if (!obj.contains(key)) fail("missing field '" + std::string(key) + "'" + where);
            if (!obj[key].is_string() || obj[key].get<std::string>().empty()) {
                fail("field '" + std::string(key) + "'" + where + " must be a non-empty string");
            }
            return obj[key].get<std::string>();
        };

        if (!e.is_object()) fail("expected an object");
        auto demo_id = string_field(e, "demo_id", "");
        auto db_id = string_field(e, "db_id", "");
        if (!ids.insert(demo_id).second) fail("duplicate demo_id '" + demo_id + "'");
        if (catalog && !catalog->contains(db_id)) fail("unknown db_id '" + db_id + "'");
        if (!e.contains("turns")) fail("missing field 'turns'");
        if (!e["turns"].is_array() || e["turns"].empty() || e["turns"].size() > 3) {
            fail("field 'turns' must be an array of 1 to 3 turns");
        }
        std::vector<DemoTurn> turns;
        for (std::size_t k = 0; k < e["turns"].size(); ++k) {
            const auto& t = e["turns"][k];
            std::string where = " in turns[" + std::to_string(k) + "]";
            if (!t.is_object()) fail("turns[" + std::to_string(k) + "] must be an object");
            DemoTurn turn{string_field(t, "question", where), string_field(t, "sql", where)};
            try {
                sql::tokenize(turn.sql);
            } catch (const Error& err) {
                fail("sql" + where + " does not tokenize: " + err.what());
            }
            turns.push_back(std::move(turn));
        }
        DemoSource source = DemoSource::seed;
        if (e.contains("source")) {
            auto s = e["source"].is_string() ? e["source"].get<std::string>() : std::string{};
            if (s == "seed") source = DemoSource::seed;
            else if (s == "synthesized") source = DemoSource::synthesized;
            else fail("field 'source' must be \"seed\" or \"synthesized\"");
        }
        demos.push_back(Demonstration::make(std::move(demo_id), std::move(db_id), std::move(turns), source));
    }
    return demos;
}

DemoPool load_pool(const std::filesystem::path& path, const Catalog* catalog) {
    return DemoPool::build(parse_pool(read_file(path), catalog), catalog);
}

void save_pool(const DemoPool& pool, const std::filesystem::path& path) { write_file_atomic(path, pool_to_text(pool)); }

// --- selection ---------------------------------------------------------------------------

std::vector<RankedDemo> rank_demos(std::string_view question, const std::vector<std::string>& history,
                                   const DemoPool& pool) {
    std::vector<RankedDemo> ranked;
    if (pool.empty()) return ranked;
    std::string query;
    for (const auto& h : history) query += h + " ";
    query.append(question);
    auto q = bm25::tokenize(query);
    ranked.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        ranked.push_back({i, bm25::score(q, pool.document(i), pool.corpus_stats())});
    }
    std::sort(ranked.begin(), ranked.end(), [&](const RankedDemo& a, const RankedDemo& b) {
        if (a.score != b.score) return a.score > b.score;
        return pool.demos()[a.index].demo_id < pool.demos()[b.index].demo_id;
    });
    return ranked;
}

std::vector<Demonstration> select_demos(std::string_view question, const std::vector<std::string>& history,
                                        const DemoPool& pool, int n) {
    if (n < 0) throw Error(Errc::invalid_argument, "demo count must be non-negative");
    std::vector<Demonstration> out;
    if (n == 0) return out;
    auto ranked = rank_demos(question, history, pool);
    for (std::size_t i = 0; i < ranked.size() && out.size() < static_cast<std::size_t>(n); ++i) {
        out.push_back(pool.demos()[ranked[i].index]);
    }
    return out;
}

// --- augmentation ----------------------------------------------------------------------------

namespace {

std::array<int, sql::KeywordSignature::size> cluster_key(const sql::KeywordSignature& sig) {
    auto a = sig.as_array();
    for (std::size_t i = 0; i < a.size(); ++i) {
        // index 9 is the nested-subquery count, kept exact
        if (i != 9) a[i] = a[i] > 0 ? 1 : 0;
    }
    return a;
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

// m distinct indices from [0, n), in draw order.
std::vector<std::size_t> sample_distinct(std::mt19937_64& rng, std::size_t n, std::size_t m) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + pick(rng, n - i)]);
    idx.resize(m);
    return idx;
}

std::optional<std::pair<std::string, std::string>> parse_fusion_reply(const std::string& reply) {
    static const std::regex fence(R"(```[A-Za-z]*[ \t]*\r?\n?([\s\S]*?)```)");
    static const std::regex question_line(R"((?:^|\n)\s*(?:[Qq]uestion|QUESTION|问题)\s*(?::|：)\s*([^\n]+))");
    std::smatch sql_match;
    std::smatch q_match;
    if (!std::regex_search(reply, sql_match, fence)) return std::nullopt;
    if (!std::regex_search(reply, q_match, question_line)) return std::nullopt;
    std::string sql_text(trim(sql_match[1].str()));
    std::string question(trim(q_match[1].str()));
    if (sql_text.empty() || question.empty()) return std::nullopt;
    return std::make_pair(question, sql_text);
}

} // namespace

std::vector<std::vector<std::string>> cluster_pool(const DemoPool& pool) {
    if (pool.empty()) throw Error(Errc::empty_pool, "demonstration pool is empty");
    std::map<std::array<int, sql::KeywordSignature::size>, std::vector<std::string>> groups;
    for (const auto& d : pool.demos()) groups[cluster_key(d.signature)].push_back(d.demo_id);
    std::vector<std::pair<std::array<int, sql::KeywordSignature::size>, std::vector<std::string>>> ordered(
        groups.begin(), groups.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return a.second.size() > b.second.size(); });
    std::vector<std::vector<std::string>> out;
    out.reserve(ordered.size());
    for (auto& [_, ids] : ordered) out.push_back(std::move(ids));
    return out;
}

std::vector<Demonstration> fuse_round(const DemoPool& pool, const Catalog& catalog, llm::Client& client,
                                      const FusedConfig& cfg, std::mt19937_64& rng,
                                      const std::string& fusion_template) {
    if (cfg.fusion_arity < 2 || cfg.additions_cap < 0) throw Error(Errc::invalid_argument, "invalid fused config");
    const auto m = static_cast<std::size_t>(cfg.fusion_arity);
    if (pool.size() < m) {
        throw Error(Errc::insufficient_pool, "need at least " + std::to_string(m) + " demonstrations to fuse, have " +
                                                 std::to_string(pool.size()));
    }
    auto databases = catalog.entries();
    if (databases.empty()) throw Error(Errc::empty_catalog, "no databases to synthesize demonstrations for");
    auto clusters = cluster_pool(pool);

    std::vector<Demonstration> out;
    for (int i = 0; i < cfg.additions_cap; ++i) {
        std::vector<const Demonstration*> picked;
        if (clusters.size() >= m) {
            for (auto c : sample_distinct(rng, clusters.size(), m)) {
                const auto& members = clusters[c];
                picked.push_back(pool.find(members[pick(rng, members.size())]));
            }
        } else {
            for (auto d : sample_distinct(rng, pool.size(), m)) picked.push_back(&pool.demos()[d]);
        }
        const auto& target = databases[pick(rng, databases.size())];

        std::string examples;
        for (const auto* d : picked) {
            for (const auto& t : d->turns) examples += "Question: " + t.question + "\nSQL: " + t.sql + "\n";
            examples += "\n";
        }
        std::vector<llm::ChatMessage> messages = {
            {llm::Role::system, "You write new, diverse text-to-SQL examples for SQLite databases."},
            {llm::Role::user, render_template(fusion_template, {{"examples", examples},
                                                                {"schema", serialize_schema(*target)}})},
        };
        auto reply = client.complete(messages);
        auto parsed = parse_fusion_reply(reply);
        if (!parsed) continue;
        auto& [question, sql_text] = *parsed;
        auto id = "syn-" + sha256_hex(target->db_id + "\n" + sql::normalize_sql(sql_text)).substr(0, 12);
        out.push_back(Demonstration::make(std::move(id), target->db_id, {{question, sql_text}},
                                          DemoSource::synthesized));
    }
    return out;
}

std::string_view to_string(RejectReason r) noexcept {
    switch (r) {
    case RejectReason::untokenizable: return "untokenizable";
    case RejectReason::unparseable: return "unparseable";
    case RejectReason::unknown_database: return "unknown-database";
    case RejectReason::unknown_table: return "unknown-table";
    case RejectReason::execution_error: return "execution-error";
    case RejectReason::duplicate: return "duplicate";
    }
    return "unknown";
}

Verdict verify_demo(const Demonstration& demo, const Catalog& catalog, const DemoPool& pool,
                    const ExecuteOptions& exec) {
    auto reject = [](RejectReason r, std::string detail) { return Verdict{false, r, std::move(detail)}; };
    auto entry = catalog.find(demo.db_id);
    if (!entry) return reject(RejectReason::unknown_database, "unknown database '" + demo.db_id + "'");
    if (demo.turns.empty()) return reject(RejectReason::unparseable, "demonstration has no turns");

    for (const auto& t : demo.turns) {
        try {
            sql::tokenize(t.sql);
        } catch (const Error& e) {
            return reject(RejectReason::untokenizable, e.what());
        }
    }
    for (const auto& t : demo.turns) {
        sql::TableRefSet refs;
        try {
            refs = sql::extract_table_refs(t.sql);
        } catch (const Error& e) {
            return reject(RejectReason::unparseable, e.what());
        }
        for (const auto& table : refs) {
            if (!entry->find_table(table)) {
                return reject(RejectReason::unknown_table, "no table '" + table + "' in " + demo.db_id);
            }
        }
    }
    for (const auto& t : demo.turns) {
        auto result = execute(*entry, t.sql, exec);
        if (!result.ok()) return reject(RejectReason::execution_error, result.error->message);
    }
    std::set<std::string> existing;
    for (const auto& d : pool.demos()) {
        for (const auto& t : d.turns) existing.insert(sql::normalize_sql(t.sql));
    }
    for (const auto& t : demo.turns) {
        if (existing.count(sql::normalize_sql(t.sql))) {
            return reject(RejectReason::duplicate, "same SQL already in the pool: " + sql::normalize_sql(t.sql));
        }
    }
    return Verdict{true, RejectReason::duplicate, {}};
}

nlohmann::json AugmentSummary::to_json() const {
    return {{"candidates", candidates}, {"accepted", accepted}, {"rejected", rejected}};
}

std::pair<DemoPool, AugmentSummary> augment_pool(const DemoPool& pool, const Catalog& catalog, llm::Client& client,
                                                 const FusedConfig& cfg, const std::string& fusion_template) {
    if (cfg.rounds < 0) throw Error(Errc::invalid_argument, "rounds must be non-negative");
    AugmentSummary summary;
    DemoPool current = pool;
    std::mt19937_64 rng(cfg.random_seed);
    for (int round = 0; round < cfg.rounds; ++round) {
        auto candidates = fuse_round(current, catalog, client, cfg, rng, fusion_template);
        summary.candidates += static_cast<int>(candidates.size());
        std::vector<Demonstration> accepted;
        DemoPool staging = current;
        for (auto& c : candidates) {
            auto verdict = verify_demo(c, catalog, staging);
            if (!verdict.accepted) {
                ++summary.rejected[std::string(to_string(verdict.reason))];
                continue;
            }
            staging = update_pool(staging, {c}, &catalog);
            accepted.push_back(std::move(c));
        }
        summary.accepted += static_cast<int>(accepted.size());
        current = update_pool(current, accepted, &catalog);
    }
    return {std::move(current), std::move(summary)};
}

} // namespace abacus
