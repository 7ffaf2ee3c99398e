#include "abacus/bm25.hpp"

#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <cmath>

namespace abacus::bm25 {

bool is_cjk(char32_t cp) noexcept {
    return (cp >= 0x4E00 && cp <= 0x9FFF) ||   // unified ideographs
           (cp >= 0x3400 && cp <= 0x4DBF) ||   // extension A
           (cp >= 0x20000 && cp <= 0x2EBEF) || // extensions B-F
           (cp >= 0xF900 && cp <= 0xFAFF) ||   // compatibility ideographs
           (cp >= 0x3040 && cp <= 0x30FF) ||   // hiragana, katakana
           (cp >= 0xAC00 && cp <= 0xD7AF);     // hangul syllables
}

namespace {

bool is_separator(char32_t cp) {
    if (cp < 0x80) {
        return !((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9'));
    }
    // general/CJK punctuation, fullwidth forms, whitespace
    return (cp >= 0x2000 && cp <= 0x206F) || (cp >= 0x3000 && cp <= 0x303F) || (cp >= 0xFF00 && cp <= 0xFFEF) ||
           cp == 0x00A0 || (cp >= 0x00A1 && cp <= 0x00BF) || cp == 0x00D7 || cp == 0x00F7;
}

} // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
    };
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t start = pos;
        char32_t cp = next_codepoint(text, pos);
        if (is_separator(cp)) {
            flush();
        } else if (is_cjk(cp)) {
            flush();
            out.emplace_back(text.substr(start, pos - start));
        } else if (cp < 0x80) {
            current.push_back(static_cast<char>(cp >= 'A' && cp <= 'Z' ? cp - 'A' + 'a' : cp));
        } else {
            current.append(text.substr(start, pos - start));
        }
    }
    flush();
    return out;
}

CorpusStats CorpusStats::build(const std::vector<std::vector<std::string>>& docs) {
    CorpusStats stats;
    stats.doc_count = docs.size();
    std::size_t total = 0;
    for (const auto& doc : docs) {
        total += doc.size();
        std::unordered_set<std::string_view> seen(doc.begin(), doc.end());
        for (auto term : seen) ++stats.doc_freq[std::string(term)];
    }
    stats.avg_doc_len = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
    return stats;
}

double CorpusStats::idf(const std::string& term) const {
    auto it = doc_freq.find(term);
    double df = it == doc_freq.end() ? 0.0 : static_cast<double>(it->second);
    double n = static_cast<double>(doc_count);
    return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double score(const std::vector<std::string>& query_tokens, const std::vector<std::string>& doc_tokens,
             const CorpusStats& stats) {
    if (stats.doc_count == 0) throw Error(Errc::invalid_argument, "bm25 corpus is empty");
    std::unordered_map<std::string_view, int> tf;
    for (const auto& t : doc_tokens) ++tf[t];
    // avgdl is zero only when every document is empty, in which case no term matches
    double norm = stats.avg_doc_len > 0.0 ? static_cast<double>(doc_tokens.size()) / stats.avg_doc_len : 0.0;
    double total = 0.0;
    for (const auto& q : query_tokens) {
        auto it = tf.find(q);
        if (it == tf.end()) continue;
        double f = it->second;
        total += stats.idf(q) * (f * (k1 + 1.0)) / (f + k1 * (1.0 - b + b * norm));
    }
    return total;
}

std::vector<std::string> strip_plurals(std::vector<std::string> query_tokens, const CorpusStats& stats) {
    for (auto& t : query_tokens) {
        if (t.size() > 1 && t.back() == 's' && !stats.contains(t)) {
            std::string stem = t.substr(0, t.size() - 1);
            if (stats.contains(stem)) t = std::move(stem);
        }
    }
    return query_tokens;
}

} // namespace abacus::bm25
