#include "abacus/executor.hpp"

#include "abacus/error.hpp"
#include "abacus/sqlkit.hpp"
#include "abacus/util.hpp"
#include "sqlite_db.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>

namespace abacus {

std::string_view to_string(ExecErrorKind kind) noexcept {
    switch (kind) {
    case ExecErrorKind::syntax: return "syntax";
    case ExecErrorKind::schema: return "schema";
    case ExecErrorKind::runtime: return "runtime";
    case ExecErrorKind::timeout: return "timeout";
    case ExecErrorKind::rejected: return "rejected";
    }
    return "runtime";
}

ExecErrorKind exec_error_kind_from_string(std::string_view s) {
    for (auto k : {ExecErrorKind::syntax, ExecErrorKind::schema, ExecErrorKind::runtime, ExecErrorKind::timeout,
                   ExecErrorKind::rejected}) {
        if (to_string(k) == s) return k;
    }
    throw Error(Errc::invalid_argument, "unknown execution error kind '" + std::string(s) + "'");
}

nlohmann::json to_json(const ExecutionResult& r) {
    if (r.error) {
        return {{"error", {{"kind", to_string(r.error->kind)}, {"message", r.error->message}}}};
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json jr = nlohmann::json::array();
        for (const auto& v : row) jr.push_back(to_json(v));
        rows.push_back(std::move(jr));
    }
    return {{"columns", r.columns}, {"rows", std::move(rows)}, {"truncated", r.truncated}};
}

ExecutionResult execution_result_from_json(const nlohmann::json& j) {
    ExecutionResult r;
    if (j.contains("error")) {
        r.error = ExecError{j["error"].at("message").get<std::string>(),
                            exec_error_kind_from_string(j["error"].at("kind").get<std::string>())};
        return r;
    }
    r.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& jr : j.at("rows")) {
        Row row;
        for (const auto& v : jr) row.push_back(value_from_json(v));
        r.rows.push_back(std::move(row));
    }
    r.truncated = j.value("truncated", false);
    return r;
}

namespace {

ExecutionResult failure(ExecErrorKind kind, std::string message) {
    ExecutionResult r;
    r.error = ExecError{std::move(message), kind};
    return r;
}

ExecErrorKind classify(std::string_view message) {
    auto has = [&](std::string_view needle) { return message.find(needle) != std::string_view::npos; };
    if (has("syntax error") || has("incomplete input") || has("unrecognized token")) return ExecErrorKind::syntax;
    if (has("no such table") || has("no such column") || has("ambiguous column") || has("no such function")) {
        return ExecErrorKind::schema;
    }
    return ExecErrorKind::runtime;
}

bool is_write_keyword(const std::string& kw) {
    static const std::set<std::string, std::less<>> writes = {
        "INSERT", "UPDATE", "DELETE", "DROP",   "CREATE", "ALTER",    "PRAGMA",
        "ATTACH", "DETACH", "REPLACE", "VACUUM", "BEGIN",  "COMMIT",  "ROLLBACK",
    };
    return writes.count(kw) > 0;
}

struct Deadline {
    std::chrono::steady_clock::time_point at;
    bool expired = false;
};

int progress_check(void* p) {
    auto* d = static_cast<Deadline*>(p);
    if (std::chrono::steady_clock::now() >= d->at) {
        d->expired = true;
        return 1;
    }
    return 0;
}

Value read_value(sqlite3_stmt* st, int col) {
    switch (sqlite3_column_type(st, col)) {
    case SQLITE_INTEGER: return static_cast<std::int64_t>(sqlite3_column_int64(st, col));
    case SQLITE_FLOAT: return sqlite3_column_double(st, col);
    case SQLITE_TEXT: return detail::column_text(st, col);
    case SQLITE_BLOB: {
        const auto* p = static_cast<const char*>(sqlite3_column_blob(st, col));
        auto n = static_cast<std::size_t>(sqlite3_column_bytes(st, col));
        return BlobDigest{sha256_hex(std::string_view(p ? p : "", n))};
    }
    default: return Null{};
    }
}

} // namespace

ExecutionResult execute(const DatabaseEntry& entry, std::string_view sql_text, const ExecuteOptions& opts) {
    std::vector<sql::Token> tokens;
    try {
        tokens = sql::tokenize(sql_text);
    } catch (const Error& e) {
        return failure(ExecErrorKind::syntax, e.what());
    }
    while (!tokens.empty() && tokens.back().kind == sql::TokenKind::punctuation && tokens.back().text == ";") {
        tokens.pop_back();
    }
    if (tokens.empty()) return failure(ExecErrorKind::syntax, "empty statement");
    if (tokens.front().kind == sql::TokenKind::keyword && is_write_keyword(tokens.front().text)) {
        return failure(ExecErrorKind::rejected, "only read-only SELECT statements are allowed");
    }

    std::string err;
    auto conn = detail::open_readonly(entry.storage_ref, err);
    if (!conn) return failure(ExecErrorKind::runtime, "cannot open database: " + err);

    std::string_view tail;
    auto st = detail::prepare(conn.get(), sql_text, err, &tail);
    if (!st) {
        if (err.empty()) return failure(ExecErrorKind::syntax, "empty statement");
        return failure(classify(err), err);
    }
    try {
        auto rest = sql::tokenize(tail);
        bool only_semicolons = std::all_of(rest.begin(), rest.end(), [](const auto& t) {
            return t.kind == sql::TokenKind::punctuation && t.text == ";";
        });
        if (!only_semicolons) return failure(ExecErrorKind::rejected, "multiple statements are not allowed");
    } catch (const Error&) {
        return failure(ExecErrorKind::rejected, "multiple statements are not allowed");
    }
    if (!sqlite3_stmt_readonly(st.get())) {
        return failure(ExecErrorKind::rejected, "only read-only SELECT statements are allowed");
    }

    Deadline deadline{std::chrono::steady_clock::now() + opts.time_cap};
    sqlite3_progress_handler(conn.get(), 1000, progress_check, &deadline);

    ExecutionResult result;
    int ncol = sqlite3_column_count(st.get());
    for (int i = 0; i < ncol; ++i) {
        const char* name = sqlite3_column_name(st.get(), i);
        result.columns.emplace_back(name ? name : "");
    }
    int rc;
    while ((rc = sqlite3_step(st.get())) == SQLITE_ROW) {
        if (result.rows.size() >= opts.row_cap) {
            result.truncated = true;
            break;
        }
        Row row;
        row.reserve(static_cast<std::size_t>(ncol));
        for (int i = 0; i < ncol; ++i) row.push_back(read_value(st.get(), i));
        result.rows.push_back(std::move(row));
    }
    if (rc != SQLITE_ROW && rc != SQLITE_DONE) {
        if (deadline.expired || (rc & 0xFF) == SQLITE_INTERRUPT) {
            return failure(ExecErrorKind::timeout,
                           "statement exceeded " + std::to_string(opts.time_cap.count()) + " ms");
        }
        std::string msg = sqlite3_errmsg(conn.get());
        return failure(classify(msg), msg);
    }
    return result;
}

// --- comparison ------------------------------------------------------------------

ComparisonPolicy ComparisonPolicy::for_gold(std::string_view gold_sql) {
    ComparisonPolicy p;
    p.ordered = sql::has_order_by(gold_sql);
    return p;
}

namespace {

std::optional<double> as_number(const Value& v) {
    if (auto i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    if (auto d = std::get_if<double>(&v)) return *d;
    return std::nullopt;
}

bool rows_equal(const Row& a, const Row& b, double tol) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!values_equal(a[i], b[i], tol)) return false;
    }
    return true;
}

// Groups rows by everything except numeric magnitudes; only rows in the same
// group can possibly be equal.
std::string group_key(const Row& row) {
    std::string key;
    for (const auto& v : row) {
        std::visit(
            [&](const auto& x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, Null>) {
                    key += "n;";
                } else if constexpr (std::is_same_v<T, std::int64_t> || std::is_same_v<T, double>) {
                    key += "#;";
                } else if constexpr (std::is_same_v<T, std::string>) {
                    key += "t" + std::to_string(x.size()) + ":" + x + ";";
                } else {
                    key += "b" + x.sha256 + ";";
                }
            },
            v);
    }
    return key;
}

bool numeric_less(const Row& a, const Row& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto x = as_number(a[i]);
        auto y = as_number(b[i]);
        if (x && y && *x != *y) return *x < *y;
    }
    return false;
}

// Kuhn's augmenting-path bipartite matching.
bool perfect_matching(const std::vector<const Row*>& left, const std::vector<const Row*>& right, double tol) {
    const std::size_t n = left.size();
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (rows_equal(*left[i], *right[j], tol)) adj[i].push_back(j);
        }
        if (adj[i].empty()) return false;
    }
    std::vector<long> match_right(n, -1);
    std::vector<char> visited;
    std::function<bool(std::size_t)> augment = [&](std::size_t u) {
        for (auto v : adj[u]) {
            if (visited[v]) continue;
            visited[v] = 1;
            if (match_right[v] < 0 || augment(static_cast<std::size_t>(match_right[v]))) {
                match_right[v] = static_cast<long>(u);
                return true;
            }
        }
        return false;
    };
    for (std::size_t u = 0; u < n; ++u) {
        visited.assign(n, 0);
        if (!augment(u)) return false;
    }
    return true;
}

constexpr std::size_t kMatchingLimit = 2000;

} // namespace

bool values_equal(const Value& a, const Value& b, double rel_tol) noexcept {
    if (std::holds_alternative<Null>(a) || std::holds_alternative<Null>(b)) {
        return std::holds_alternative<Null>(a) && std::holds_alternative<Null>(b);
    }
    auto ia = std::get_if<std::int64_t>(&a);
    auto ib = std::get_if<std::int64_t>(&b);
    if (ia && ib) return *ia == *ib;
    auto x = as_number(a);
    auto y = as_number(b);
    if (x && y) {
        if (*x == *y) return true;
        if (std::isnan(*x) || std::isnan(*y)) return false;
        return std::fabs(*x - *y) <= rel_tol * std::max(std::fabs(*x), std::fabs(*y));
    }
    if (x || y) return false;
    return a == b;
}

bool compare_results(const ExecutionResult& pred, const ExecutionResult& gold, const ComparisonPolicy& policy) {
    if (!pred.ok() || !gold.ok()) return false;
    if (pred.columns.size() != gold.columns.size()) return false;
    if (pred.rows.size() != gold.rows.size()) return false;
    const double tol = policy.float_tolerance;

    if (policy.ordered) {
        for (std::size_t i = 0; i < pred.rows.size(); ++i) {
            if (!rows_equal(pred.rows[i], gold.rows[i], tol)) return false;
        }
        return true;
    }

    std::map<std::string, std::pair<std::vector<const Row*>, std::vector<const Row*>>> groups;
    for (const auto& r : pred.rows) groups[group_key(r)].first.push_back(&r);
    for (const auto& r : gold.rows) groups[group_key(r)].second.push_back(&r);
    for (auto& [_, sides] : groups) {
        auto& [p, g] = sides;
        if (p.size() != g.size()) return false;
        auto by_value = [](const Row* a, const Row* b) { return numeric_less(*a, *b); };
        std::stable_sort(p.begin(), p.end(), by_value);
        std::stable_sort(g.begin(), g.end(), by_value);
        bool pairwise = true;
        for (std::size_t i = 0; i < p.size() && pairwise; ++i) pairwise = rows_equal(*p[i], *g[i], tol);
        if (pairwise) continue;
        if (p.size() > kMatchingLimit || !perfect_matching(p, g, tol)) return false;
    }
    return true;
}

} // namespace abacus
