#include "abacus/sqlkit.hpp"

#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

namespace abacus::sql {

namespace {

const std::unordered_set<std::string_view>& keywords() {
    static const std::unordered_set<std::string_view> set = {
        "SELECT", "FROM",    "WHERE",   "GROUP",     "BY",       "HAVING",  "ORDER",   "LIMIT",  "OFFSET",
        "UNION",  "INTERSECT", "EXCEPT", "ALL",      "DISTINCT", "AS",      "ON",      "USING",  "JOIN",
        "INNER",  "LEFT",    "RIGHT",   "FULL",      "OUTER",    "CROSS",   "NATURAL", "AND",    "OR",
        "NOT",    "IN",      "IS",      "NULL",      "LIKE",     "GLOB",    "BETWEEN", "EXISTS", "CASE",
        "WHEN",   "THEN",    "ELSE",    "END",       "ASC",      "DESC",    "CAST",    "COLLATE", "ESCAPE",
        "INSERT", "INTO",    "VALUES",  "UPDATE",    "SET",      "DELETE",  "DROP",    "CREATE", "ALTER",
        "TABLE",  "INDEX",   "VIEW",    "TRIGGER",   "PRAGMA",   "ATTACH",  "DETACH",  "REPLACE", "WITH",
        "RECURSIVE", "VACUUM", "BEGIN", "COMMIT",    "ROLLBACK", "TRUE",    "FALSE",
    };
    return set;
}

bool ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool ident_part(unsigned char c) { return std::isalnum(c) || c == '_' || c == '$' || c >= 0x80; }

std::size_t skip_quoted(std::string_view s, std::size_t i, char close) {
    // `i` points at the opening quote; returns the index one past the closing quote.
    std::size_t j = i + 1;
    while (j < s.size()) {
        if (s[j] == close) {
            if (close != ']' && j + 1 < s.size() && s[j + 1] == close) {
                j += 2;
                continue;
            }
            return j + 1;
        }
        ++j;
    }
    throw Error(Errc::unterminated_string, "unterminated quote starting at offset " + std::to_string(i));
}

bool is_kw(const Token& t, std::string_view kw) { return t.kind == TokenKind::keyword && t.text == kw; }
bool is_punct(const Token& t, std::string_view p) { return t.kind == TokenKind::punctuation && t.text == p; }

std::string unquote(std::string_view text) {
    if (text.size() >= 2) {
        char open = text.front();
        char close = open == '[' ? ']' : open;
        if ((open == '"' || open == '`' || open == '[') && text.back() == close) {
            std::string out;
            for (std::size_t i = 1; i + 1 < text.size(); ++i) {
                out.push_back(text[i]);
                if (open != '[' && text[i] == close && i + 2 < text.size() && text[i + 1] == close) ++i;
            }
            return out;
        }
    }
    return std::string(text);
}

} // namespace

bool is_aggregate_function(std::string_view upper_name) noexcept {
    return upper_name == "COUNT" || upper_name == "SUM" || upper_name == "AVG" || upper_name == "MIN" ||
           upper_name == "MAX";
}

std::array<int, KeywordSignature::size> KeywordSignature::as_array() const {
    return {join, where, group_by, having, order_by, limit, union_, intersect, except, nested_subqueries, aggregates};
}

std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        if (std::isspace(c)) {
            ++i;
        } else if (c == '-' && i + 1 < s.size() && s[i + 1] == '-') {
            auto nl = s.find('\n', i);
            i = nl == std::string_view::npos ? s.size() : nl + 1;
        } else if (c == '/' && i + 1 < s.size() && s[i + 1] == '*') {
            auto end = s.find("*/", i + 2);
            i = end == std::string_view::npos ? s.size() : end + 2;
        } else if (c == '\'') {
            auto end = skip_quoted(s, i, '\'');
            out.push_back({TokenKind::literal, std::string(s.substr(i, end - i))});
            i = end;
        } else if (c == '"' || c == '`' || c == '[') {
            auto end = skip_quoted(s, i, c == '[' ? ']' : static_cast<char>(c));
            out.push_back({TokenKind::identifier, std::string(s.substr(i, end - i))});
            i = end;
        } else if (std::isdigit(c) || (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
            std::size_t j = i;
            if (c == '0' && j + 1 < s.size() && (s[j + 1] == 'x' || s[j + 1] == 'X')) {
                j += 2;
                while (j < s.size() && std::isxdigit(static_cast<unsigned char>(s[j]))) ++j;
            } else {
                while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
                if (j < s.size() && s[j] == '.') {
                    ++j;
                    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
                }
                if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
                    std::size_t k = j + 1;
                    if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
                    if (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) {
                        j = k;
                        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
                    }
                }
            }
            out.push_back({TokenKind::literal, std::string(s.substr(i, j - i))});
            i = j;
        } else if (ident_start(c)) {
            std::size_t j = i;
            while (j < s.size() && ident_part(static_cast<unsigned char>(s[j]))) ++j;
            std::string_view word = s.substr(i, j - i);
            std::string upper = to_upper(word);
            bool kw = keywords().count(upper) > 0;
            if (!kw && is_aggregate_function(upper)) {
                std::size_t k = j;
                while (k < s.size() && std::isspace(static_cast<unsigned char>(s[k]))) ++k;
                kw = k < s.size() && s[k] == '(';
            }
            if (kw) {
                out.push_back({TokenKind::keyword, std::move(upper)});
            } else {
                out.push_back({TokenKind::identifier, std::string(word)});
            }
            i = j;
        } else if (c == '(' || c == ')' || c == ',' || c == '.' || c == ';') {
            out.push_back({TokenKind::punctuation, std::string(1, static_cast<char>(c))});
            ++i;
        } else {
            static constexpr std::string_view two_char[] = {"<=", ">=", "<>", "!=", "==", "||", "<<", ">>"};
            std::string_view rest = s.substr(i);
            auto it = std::find_if(std::begin(two_char), std::end(two_char),
                                   [&](std::string_view op) { return rest.substr(0, 2) == op; });
            std::size_t len = it != std::end(two_char) ? 2 : 1;
            out.push_back({TokenKind::op, std::string(s.substr(i, len))});
            i += len;
        }
    }
    return out;
}

TableRefSet extract_table_refs(std::string_view sql_text) {
    auto tokens = tokenize(sql_text);
    TableRefSet tables;
    std::set<std::string> cte_names;

    bool starts_with_with = !tokens.empty() && is_kw(tokens.front(), "WITH");
    if (starts_with_with) {
        for (std::size_t i = 0; i + 2 < tokens.size(); ++i) {
            if (tokens[i].kind == TokenKind::identifier && is_kw(tokens[i + 1], "AS") && is_punct(tokens[i + 2], "(")) {
                cte_names.insert(to_lower(unquote(tokens[i].text)));
            }
        }
    }

    std::vector<bool> in_from{false}; // one flag per parenthesis depth
    bool expect_table = false;
    bool unresolved = false;
    bool saw_from = false;
    bool cte_hit = false;

    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Token& t = tokens[i];
        if (expect_table) {
            expect_table = false;
            if (t.kind == TokenKind::identifier) {
                std::string name = unquote(t.text);
                // schema-qualified name: keep the table part
                if (i + 2 < tokens.size() && is_punct(tokens[i + 1], ".") &&
                    tokens[i + 2].kind == TokenKind::identifier) {
                    name = unquote(tokens[i + 2].text);
                    i += 2;
                }
                auto lowered = to_lower(name);
                if (cte_names.count(lowered)) cte_hit = true;
                else tables.insert(std::move(lowered));
                continue;
            }
            if (!is_punct(t, "(")) unresolved = true;
        }
        if (is_punct(t, "(")) {
            in_from.push_back(false);
        } else if (is_punct(t, ")")) {
            if (in_from.size() > 1) in_from.pop_back();
        } else if (is_kw(t, "FROM") || is_kw(t, "JOIN")) {
            in_from.back() = true;
            expect_table = true;
            saw_from = true;
        } else if (is_punct(t, ",") && in_from.back()) {
            expect_table = true;
        } else if (t.kind == TokenKind::keyword &&
                   (t.text == "WHERE" || t.text == "GROUP" || t.text == "HAVING" || t.text == "ORDER" ||
                    t.text == "LIMIT" || t.text == "UNION" || t.text == "INTERSECT" || t.text == "EXCEPT" ||
                    t.text == "SELECT")) {
            in_from.back() = false;
        }
    }
    if (expect_table) unresolved = true;
    if (unresolved) throw Error(Errc::parse_failure, "cannot resolve FROM/JOIN target in: " + std::string(sql_text));
    if (tables.empty() && saw_from && !cte_hit) {
        throw Error(Errc::parse_failure, "FROM clause names no table in: " + std::string(sql_text));
    }
    if (tables.empty()) {
        bool plain_select = !tokens.empty() && (is_kw(tokens.front(), "SELECT") || is_kw(tokens.front(), "VALUES") ||
                                                starts_with_with);
        if (!plain_select) throw Error(Errc::parse_failure, "no tables found in: " + std::string(sql_text));
    }
    return tables;
}

KeywordSignature keyword_signature(std::string_view sql_text) {
    KeywordSignature sig;
    std::vector<Token> tokens;
    try {
        tokens = tokenize(sql_text);
    } catch (const Error&) {
        return sig;
    }
    int selects = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Token& t = tokens[i];
        if (t.kind != TokenKind::keyword) continue;
        bool followed_by_by = i + 1 < tokens.size() && is_kw(tokens[i + 1], "BY");
        if (t.text == "JOIN") ++sig.join;
        else if (t.text == "WHERE") ++sig.where;
        else if (t.text == "GROUP" && followed_by_by) ++sig.group_by;
        else if (t.text == "HAVING") ++sig.having;
        else if (t.text == "ORDER" && followed_by_by) ++sig.order_by;
        else if (t.text == "LIMIT") ++sig.limit;
        else if (t.text == "UNION") ++sig.union_;
        else if (t.text == "INTERSECT") ++sig.intersect;
        else if (t.text == "EXCEPT") ++sig.except;
        else if (t.text == "SELECT") ++selects;
        else if (is_aggregate_function(t.text)) ++sig.aggregates;
    }
    sig.nested_subqueries = std::max(0, selects - 1);
    return sig;
}

std::string normalize_sql(std::string_view sql_text) {
    std::vector<Token> tokens;
    try {
        tokens = tokenize(sql_text);
    } catch (const Error&) {
        std::string out;
        for (char c : trim(sql_text)) {
            bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
            if (space && (out.empty() || out.back() == ' ')) continue;
            out.push_back(space ? ' ' : c);
        }
        return out;
    }
    while (!tokens.empty() && is_punct(tokens.back(), ";")) tokens.pop_back();
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out.push_back(' ');
        out += t.text;
    }
    return out;
}

bool has_order_by(std::string_view sql_text) {
    std::vector<Token> tokens;
    try {
        tokens = tokenize(sql_text);
    } catch (const Error&) {
        return false;
    }
    int depth = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (is_punct(tokens[i], "(")) ++depth;
        else if (is_punct(tokens[i], ")")) depth = std::max(0, depth - 1);
        else if (depth == 0 && is_kw(tokens[i], "ORDER") && i + 1 < tokens.size() && is_kw(tokens[i + 1], "BY"))
            return true;
    }
    return false;
}

} // namespace abacus::sql
