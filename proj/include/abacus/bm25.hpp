#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace abacus::bm25 {

inline constexpr double k1 = 1.2;
inline constexpr double b = 0.75;

/// Lower-cases ASCII, splits on anything that is not a letter or digit, and
/// emits every CJK code point (ideographs, kana, hangul) as its own token.
std::vector<std::string> tokenize(std::string_view text);

bool is_cjk(char32_t cp) noexcept;

/// Document frequencies and lengths for one corpus.
struct CorpusStats {
    std::size_t doc_count = 0;
    double avg_doc_len = 0.0;
    std::unordered_map<std::string, std::size_t> doc_freq;

    static CorpusStats build(const std::vector<std::vector<std::string>>& docs);

    /// ln((N - df + 0.5) / (df + 0.5) + 1)
    double idf(const std::string& term) const;
    bool contains(const std::string& term) const { return doc_freq.count(term) > 0; }
};

/// Okapi BM25 of one document. Each query token occurrence contributes its own
/// term; tokens absent from the document contribute zero.
double score(const std::vector<std::string>& query_tokens, const std::vector<std::string>& doc_tokens,
             const CorpusStats& stats);

/// Drops a trailing "s" from query tokens that are not in the vocabulary when
/// the stripped form is.
std::vector<std::string> strip_plurals(std::vector<std::string> query_tokens, const CorpusStats& stats);

} // namespace abacus::bm25
