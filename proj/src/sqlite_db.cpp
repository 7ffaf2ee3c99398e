#include "sqlite_db.hpp"

namespace abacus::detail {

namespace {

std::string uri_escape(const std::string& path) {
    std::string out;
    for (char c : path) {
        switch (c) {
        case '%': out += "%25"; break;
        case '?': out += "%3f"; break;
        case '#': out += "%23"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

Connection open_with(const std::string& name, int flags, std::string& err) {
    sqlite3* raw = nullptr;
    int rc = sqlite3_open_v2(name.c_str(), &raw, flags, nullptr);
    Connection conn(raw);
    if (rc != SQLITE_OK) {
        err = raw ? sqlite3_errmsg(raw) : sqlite3_errstr(rc);
        return nullptr;
    }
    sqlite3_extended_result_codes(conn.get(), 1);
    return conn;
}

} // namespace

Connection open_readonly(const std::filesystem::path& path, std::string& err) {
    if (!std::filesystem::is_regular_file(path)) {
        err = "no such file: " + path.string();
        return nullptr;
    }
    auto uri = "file:" + uri_escape(std::filesystem::absolute(path).string()) + "?mode=ro&immutable=1";
    return open_with(uri, SQLITE_OPEN_READONLY | SQLITE_OPEN_URI | SQLITE_OPEN_NOMUTEX, err);
}

Connection open_readwrite(const std::filesystem::path& path, std::string& err) {
    return open_with(path.string(), SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_NOMUTEX, err);
}

Statement prepare(sqlite3* db, std::string_view sql, std::string& err, std::string_view* tail) {
    sqlite3_stmt* raw = nullptr;
    const char* rest = nullptr;
    int rc = sqlite3_prepare_v2(db, sql.data(), static_cast<int>(sql.size()), &raw, &rest);
    Statement st(raw);
    if (rc != SQLITE_OK) {
        err = sqlite3_errmsg(db);
        return nullptr;
    }
    if (tail) *tail = rest ? sql.substr(static_cast<std::size_t>(rest - sql.data())) : std::string_view{};
    return st;
}

std::string quote_identifier(std::string_view name) {
    std::string out = "\"";
    for (char c : name) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace abacus::detail
