#pragma once

// Thin RAII layer over the sqlite3 C API. Internal to the library.

#include <sqlite3.h>

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace abacus::detail {

struct ConnCloser {
    void operator()(sqlite3* db) const noexcept { sqlite3_close_v2(db); }
};
struct StmtFinalizer {
    void operator()(sqlite3_stmt* st) const noexcept { sqlite3_finalize(st); }
};

using Connection = std::unique_ptr<sqlite3, ConnCloser>;
using Statement = std::unique_ptr<sqlite3_stmt, StmtFinalizer>;

/// Opens `path` read-only through a URI so no journal or WAL file is created.
/// Returns null and fills `err` on failure.
Connection open_readonly(const std::filesystem::path& path, std::string& err);

/// Opens (creating if needed) a writable database. Used only to materialize scripts.
Connection open_readwrite(const std::filesystem::path& path, std::string& err);

/// Prepares one statement; null on failure with `err` set. `tail` receives the unparsed rest.
Statement prepare(sqlite3* db, std::string_view sql, std::string& err, std::string_view* tail = nullptr);

std::string quote_identifier(std::string_view name);

inline std::string column_text(sqlite3_stmt* st, int col) {
    auto* p = sqlite3_column_text(st, col);
    return p ? std::string(reinterpret_cast<const char*>(p),
                           static_cast<std::size_t>(sqlite3_column_bytes(st, col)))
             : std::string{};
}

} // namespace abacus::detail
