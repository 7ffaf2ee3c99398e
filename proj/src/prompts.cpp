#include "abacus/prompts.hpp"

#include "abacus/util.hpp"

namespace abacus {

PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    t.system =
        "You are an expert SQLite assistant in a multi-turn conversation. Translate the user's latest "
        "question into a single SQL query over the given database schema. Later questions may refer to "
        "earlier ones; use the dialogue history to resolve them. Reply with exactly one SQL statement "
        "in a fenced code block (```sql ... ```) and nothing else.";
    t.pre_sql =
        "You are an expert SQLite assistant. Draft a SQL query for the user's latest question over the "
        "given schema. The draft is used to decide which tables are relevant, so reference every table "
        "the answer needs. Reply with exactly one SQL statement in a fenced code block (```sql ... ```).";
    t.question = "### Database schema\n{schema}\n### Dialogue history\n{history}\n### Question\n{question}";
    t.debug =
        "The SQL query below failed when executed against the database.\n\n"
        "### Error\n{error}\n\n### Database schema\n{schema}\n### Question\n{question}\n\n"
        "### Failing SQL\n```sql\n{sql}\n```\n\n"
        "Fix the query so that it runs and answers the question. Reply with exactly one SQL statement in a "
        "fenced code block (```sql ... ```).";
    t.rewrite =
        "Question: {query}\n\nThe following tables have already been retrieved for this question:\n{tables}\n\n"
        "Rewrite the question, removing every part that these tables already cover, so that only the "
        "information still needing other tables remains. If nothing remains, reply with <DONE>. Reply with "
        "the rewritten question only.";
    t.fusion =
        "Here are example questions with their SQL queries:\n\n{examples}\n"
        "Write one new question and SQL query for the database below. Combine the structure of the "
        "examples above but do not copy any of them.\n\n### Database schema\n{schema}\n"
        "Answer in this format:\nQuestion: <question>\n```sql\n<query>\n```";
    return t;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
    auto t = defaults();
    auto overlay = [&](const char* name, std::string& slot) {
        auto path = dir / name;
        if (std::filesystem::is_regular_file(path)) slot = read_file(path);
    };
    overlay("system.txt", t.system);
    overlay("pre_sql.txt", t.pre_sql);
    overlay("question.txt", t.question);
    overlay("debug.txt", t.debug);
    overlay("rewrite.txt", t.rewrite);
    overlay("fusion.txt", t.fusion);
    return t;
}

} // namespace abacus
