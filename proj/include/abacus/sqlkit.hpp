#pragma once

#include <array>
#include <compare>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace abacus::sql {

enum class TokenKind { keyword, identifier, literal, op, punctuation };

struct Token {
    TokenKind kind;
    std::string text; ///< source slice; keywords upper-cased

    bool operator==(const Token&) const = default;
};

/// Lexes the SELECT dialect used by Spider-family gold SQL. Quoted strings and
/// identifiers stay intact, comments are dropped, unknown characters become
/// single-character tokens. Throws Errc::unterminated_string.
std::vector<Token> tokenize(std::string_view sql);

/// Structural features of one statement, in a fixed order.
struct KeywordSignature {
    int join = 0;
    int where = 0;
    int group_by = 0;
    int having = 0;
    int order_by = 0;
    int limit = 0;
    int union_ = 0;
    int intersect = 0;
    int except = 0;
    int nested_subqueries = 0; ///< SELECT count minus one, floored at zero
    int aggregates = 0;        ///< COUNT/SUM/AVG/MIN/MAX calls

    static constexpr std::size_t size = 11;
    std::array<int, size> as_array() const;
    auto operator<=>(const KeywordSignature&) const = default;
};

/// Lower-cased base table names.
using TableRefSet = std::set<std::string>;

/// Base tables from every FROM/JOIN, including subqueries and set-operation
/// branches. Aliases and columns are never included. Throws Errc::parse_failure
/// when a FROM/JOIN target cannot be resolved, or when a statement that is not a
/// plain SELECT yields no tables.
TableRefSet extract_table_refs(std::string_view sql);

KeywordSignature keyword_signature(std::string_view sql);

/// Upper-cased keywords, single spaces, trailing semicolons removed; idempotent.
std::string normalize_sql(std::string_view sql);

/// True iff ORDER BY appears outside any parentheses.
bool has_order_by(std::string_view sql);

bool is_aggregate_function(std::string_view upper_name) noexcept;

} // namespace abacus::sql
