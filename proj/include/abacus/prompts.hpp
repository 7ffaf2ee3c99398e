#pragma once

#include <filesystem>
#include <string>

namespace abacus {

/// Prompt texts with `{placeholder}` slots. Defaults are compiled in; a prompt
/// directory can override any of them (system.txt, pre_sql.txt, debug.txt,
/// rewrite.txt, fusion.txt, question.txt).
struct PromptTemplates {
    std::string system;   ///< generation system message
    std::string pre_sql;  ///< system message for the preliminary pass
    std::string question; ///< final user message: {schema} {history} {question}
    std::string debug;    ///< {error} {schema} {question} {sql}
    std::string rewrite;  ///< {query} {tables}
    std::string fusion;   ///< {examples} {schema}

    static PromptTemplates defaults();
    /// Defaults overlaid with whichever files exist in `dir`.
    static PromptTemplates load(const std::filesystem::path& dir);
};

} // namespace abacus
