#include "abacus/catalog.hpp"

#include "abacus/error.hpp"
#include "abacus/util.hpp"
#include "sqlite_db.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <set>
#include <unistd.h>

namespace abacus {

namespace fs = std::filesystem;
using detail::column_text;
using detail::quote_identifier;

const ColumnSchema* TableSchema::find_column(std::string_view column) const {
    auto it = std::find_if(columns.begin(), columns.end(), [&](const auto& c) { return iequals(c.name, column); });
    return it == columns.end() ? nullptr : &*it;
}

const TableSchema* DatabaseEntry::find_table(std::string_view table) const {
    auto it = std::find_if(tables.begin(), tables.end(), [&](const auto& t) { return iequals(t.name, table); });
    return it == tables.end() ? nullptr : &*it;
}

std::vector<std::string> DatabaseEntry::table_names() const {
    std::vector<std::string> out;
    out.reserve(tables.size());
    for (const auto& t : tables) out.push_back(t.name);
    return out;
}

namespace {

[[noreturn]] void corrupt(const fs::path& file, const std::string& why) {
    throw Error(Errc::corrupt_database, "cannot read database " + file.filename().string() + ": " + why);
}

struct RawFk {
    std::string from;
    std::string table;
    std::optional<std::string> to;
};

} // namespace

DatabaseEntry read_database(const fs::path& file, std::string db_id, std::string display_name) {
    std::string err;
    auto conn = detail::open_readonly(file, err);
    if (!conn) corrupt(file, err);

    DatabaseEntry entry;
    entry.db_id = std::move(db_id);
    entry.display_name = display_name.empty() ? entry.db_id : std::move(display_name);
    entry.storage_ref = file;

    auto list = detail::prepare(conn.get(),
                                "SELECT name FROM sqlite_master WHERE type = 'table' "
                                "AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid",
                                err);
    if (!list) corrupt(file, err);
    int rc;
    while ((rc = sqlite3_step(list.get())) == SQLITE_ROW) {
        TableSchema t;
        t.name = column_text(list.get(), 0);
        entry.tables.push_back(std::move(t));
    }
    if (rc != SQLITE_DONE) corrupt(file, sqlite3_errmsg(conn.get()));
    if (entry.tables.empty()) {
        throw Error(Errc::empty_database, "database " + file.filename().string() + " has no user tables");
    }

    std::map<std::string, std::vector<RawFk>> fks;
    for (auto& table : entry.tables) {
        auto info = detail::prepare(conn.get(), "PRAGMA table_info(" + quote_identifier(table.name) + ")", err);
        if (!info) corrupt(file, err);
        while ((rc = sqlite3_step(info.get())) == SQLITE_ROW) {
            ColumnSchema col;
            col.name = column_text(info.get(), 1);
            col.declared_type = column_text(info.get(), 2);
            col.is_primary_key = sqlite3_column_int(info.get(), 5) > 0;
            table.columns.push_back(std::move(col));
        }
        if (rc != SQLITE_DONE) corrupt(file, sqlite3_errmsg(conn.get()));

        auto fk = detail::prepare(conn.get(), "PRAGMA foreign_key_list(" + quote_identifier(table.name) + ")", err);
        if (!fk) corrupt(file, err);
        while ((rc = sqlite3_step(fk.get())) == SQLITE_ROW) {
            RawFk raw;
            raw.table = column_text(fk.get(), 2);
            raw.from = column_text(fk.get(), 3);
            if (sqlite3_column_type(fk.get(), 4) != SQLITE_NULL) raw.to = column_text(fk.get(), 4);
            fks[table.name].push_back(std::move(raw));
        }
        if (rc != SQLITE_DONE) corrupt(file, sqlite3_errmsg(conn.get()));

        auto count = detail::prepare(conn.get(), "SELECT count(*) FROM " + quote_identifier(table.name), err);
        if (!count) corrupt(file, err);
        if (sqlite3_step(count.get()) != SQLITE_ROW) corrupt(file, sqlite3_errmsg(conn.get()));
        table.row_count = sqlite3_column_int64(count.get(), 0);
    }

    // Resolve declared FKs; dangling references (missing table/column) are dropped.
    for (auto& table : entry.tables) {
        for (const auto& raw : fks[table.name]) {
            const TableSchema* parent = entry.find_table(raw.table);
            if (!parent) continue;
            const ColumnSchema* target = nullptr;
            if (raw.to) {
                target = parent->find_column(*raw.to);
            } else {
                auto pk = std::find_if(parent->columns.begin(), parent->columns.end(),
                                       [](const auto& c) { return c.is_primary_key; });
                if (pk != parent->columns.end()) target = &*pk;
            }
            if (!target) continue;
            for (auto& col : table.columns) {
                if (iequals(col.name, raw.from) && !col.foreign_ref) {
                    col.foreign_ref = ForeignRef{parent->name, target->name};
                }
            }
        }
    }
    return entry;
}

std::string serialize_schema(const DatabaseEntry& entry, const std::optional<std::vector<std::string>>& subset) {
    if (subset) {
        for (const auto& name : *subset) {
            if (!entry.find_table(name)) {
                throw Error(Errc::unknown_table, "unknown table '" + name + "' in database " + entry.db_id);
            }
        }
    }
    auto wanted = [&](const TableSchema& t) {
        if (!subset) return true;
        return std::any_of(subset->begin(), subset->end(), [&](const auto& n) { return iequals(n, t.name); });
    };

    std::string out;
    for (const auto& table : entry.tables) {
        if (!wanted(table)) continue;
        if (!out.empty()) out += "\n";
        out += "CREATE TABLE " + table.name + " (\n";
        std::vector<std::string> lines;
        std::vector<std::string> pk;
        for (const auto& col : table.columns) {
            lines.push_back(col.declared_type.empty() ? col.name : col.name + " " + col.declared_type);
            if (col.is_primary_key) pk.push_back(col.name);
        }
        if (!pk.empty()) {
            std::string clause = "PRIMARY KEY (";
            for (std::size_t i = 0; i < pk.size(); ++i) clause += (i ? ", " : "") + pk[i];
            lines.push_back(clause + ")");
        }
        for (const auto& col : table.columns) {
            if (col.foreign_ref) {
                lines.push_back("FOREIGN KEY (" + col.name + ") REFERENCES " + col.foreign_ref->table + " (" +
                                col.foreign_ref->column + ")");
            }
        }
        for (std::size_t i = 0; i < lines.size(); ++i) {
            out += "  " + lines[i] + (i + 1 < lines.size() ? ",\n" : "\n");
        }
        out += ");\n";
    }
    return out;
}

namespace {

Value read_value(sqlite3_stmt* st, int col) {
    switch (sqlite3_column_type(st, col)) {
    case SQLITE_INTEGER: return static_cast<std::int64_t>(sqlite3_column_int64(st, col));
    case SQLITE_FLOAT: return sqlite3_column_double(st, col);
    case SQLITE_TEXT: return column_text(st, col);
    case SQLITE_BLOB: {
        const auto* p = static_cast<const char*>(sqlite3_column_blob(st, col));
        auto n = static_cast<std::size_t>(sqlite3_column_bytes(st, col));
        return BlobDigest{sha256_hex(std::string_view(p ? p : "", n))};
    }
    default: return Null{};
    }
}

} // namespace

ResultTable preview_rows(const DatabaseEntry& entry, std::string_view table, int limit) {
    if (limit <= 0) throw Error(Errc::invalid_argument, "limit must be positive");
    const TableSchema* schema = entry.find_table(table);
    if (!schema) throw Error(Errc::unknown_table, "unknown table '" + std::string(table) + "' in database " + entry.db_id);

    ResultTable out;
    std::string cols;
    for (const auto& c : schema->columns) {
        out.columns.push_back(c.name);
        cols += (cols.empty() ? "" : ", ") + quote_identifier(c.name);
    }
    std::string err;
    auto conn = detail::open_readonly(entry.storage_ref, err);
    if (!conn) throw Error(Errc::corrupt_database, err);
    auto st = detail::prepare(conn.get(),
                              "SELECT " + cols + " FROM " + quote_identifier(schema->name) + " LIMIT " +
                                  std::to_string(limit),
                              err);
    if (!st) throw Error(Errc::corrupt_database, err);
    int rc;
    while ((rc = sqlite3_step(st.get())) == SQLITE_ROW) {
        Row row;
        for (int i = 0; i < static_cast<int>(out.columns.size()); ++i) row.push_back(read_value(st.get(), i));
        out.rows.push_back(std::move(row));
    }
    if (rc != SQLITE_DONE) throw Error(Errc::corrupt_database, sqlite3_errmsg(conn.get()));
    return out;
}

void materialize_script(std::string_view sql_script, const fs::path& out_file) {
    std::error_code ec;
    fs::remove(out_file, ec);
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    std::string err;
    auto conn = detail::open_readwrite(out_file, err);
    if (!conn) throw Error(Errc::io, err);
    char* msg = nullptr;
    std::string script(sql_script);
    if (sqlite3_exec(conn.get(), script.c_str(), nullptr, nullptr, &msg) != SQLITE_OK) {
        std::string why = msg ? msg : "unknown error";
        sqlite3_free(msg);
        conn.reset();
        fs::remove(out_file, ec);
        throw Error(Errc::invalid_argument, "script failed: " + why);
    }
}

// --- Catalog ---------------------------------------------------------------

namespace {

fs::path scratch_path(const std::string& db_id) {
    static std::atomic<unsigned> counter{0};
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    return fs::temp_directory_path() /
           ("abacus-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" +
            std::to_string(counter++)) /
           (db_id + ".sqlite");
}

void validate_id(const std::string& db_id) {
    if (db_id.empty() || db_id.find_first_of("/\\") != std::string::npos || db_id == "." || db_id == "..") {
        throw Error(Errc::invalid_argument, "invalid db_id '" + db_id + "'");
    }
}

} // namespace

Catalog::Catalog(fs::path storage_dir) : storage_dir_(std::move(storage_dir)) {
    fs::create_directories(*storage_dir_);
}

std::unique_ptr<Catalog> Catalog::open(const fs::path& storage_dir) {
    auto catalog = std::make_unique<Catalog>(storage_dir);
    auto manifest_path = storage_dir / "manifest.json";
    if (!fs::exists(manifest_path)) return catalog;
    auto manifest = nlohmann::json::parse(read_file(manifest_path));
    for (const auto& [db_id, meta] : manifest.items()) {
        auto entry = read_database(storage_dir / meta.at("file").get<std::string>(), db_id,
                                   meta.value("display_name", db_id));
        catalog->entries_[db_id] = std::make_shared<const DatabaseEntry>(std::move(entry));
    }
    return catalog;
}

std::shared_ptr<const DatabaseEntry> Catalog::register_file(const fs::path& file, const std::string& db_id,
                                                            std::string display_name, bool replace) {
    validate_id(db_id);
    std::lock_guard ingest_lock(ingest_mutex_);
    if (!replace && find(db_id)) throw Error(Errc::duplicate_id, "database '" + db_id + "' is already registered");

    std::shared_ptr<const DatabaseEntry> entry;
    if (storage_dir_) {
        auto final_path = *storage_dir_ / (db_id + ".sqlite");
        auto staged = *storage_dir_ / ("." + db_id + ".staging");
        fs::copy_file(file, staged, fs::copy_options::overwrite_existing);
        try {
            read_database(staged, db_id, display_name);
        } catch (...) {
            fs::remove(staged);
            throw;
        }
        fs::rename(staged, final_path);
        entry = std::make_shared<const DatabaseEntry>(read_database(final_path, db_id, std::move(display_name)));
    } else {
        entry = std::make_shared<const DatabaseEntry>(read_database(file, db_id, std::move(display_name)));
    }

    std::unique_lock lock(mutex_);
    entries_[db_id] = entry;
    if (storage_dir_) write_manifest_locked();
    return entry;
}

std::shared_ptr<const DatabaseEntry> Catalog::ingest_database(const fs::path& file, const std::string& db_id,
                                                              std::string display_name, bool replace) {
    if (!fs::is_regular_file(file)) throw Error(Errc::corrupt_database, "no such file: " + file.string());
    return register_file(file, db_id, std::move(display_name), replace);
}

std::shared_ptr<const DatabaseEntry> Catalog::ingest_bytes(std::string_view bytes, const std::string& db_id,
                                                           std::string display_name, bool replace) {
    validate_id(db_id);
    auto tmp = scratch_path(db_id);
    write_file_atomic(tmp, bytes);
    if (storage_dir_) {
        try {
            auto entry = register_file(tmp, db_id, std::move(display_name), replace);
            fs::remove_all(tmp.parent_path());
            return entry;
        } catch (...) {
            fs::remove_all(tmp.parent_path());
            throw;
        }
    }
    return register_file(tmp, db_id, std::move(display_name), replace);
}

std::shared_ptr<const DatabaseEntry> Catalog::ingest_script(std::string_view sql_script, const std::string& db_id,
                                                            std::string display_name, bool replace) {
    validate_id(db_id);
    auto tmp = scratch_path(db_id);
    materialize_script(sql_script, tmp);
    if (storage_dir_) {
        try {
            auto entry = register_file(tmp, db_id, std::move(display_name), replace);
            fs::remove_all(tmp.parent_path());
            return entry;
        } catch (...) {
            fs::remove_all(tmp.parent_path());
            throw;
        }
    }
    return register_file(tmp, db_id, std::move(display_name), replace);
}

std::shared_ptr<const DatabaseEntry> Catalog::find(std::string_view db_id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(std::string(db_id));
    return it == entries_.end() ? nullptr : it->second;
}

std::shared_ptr<const DatabaseEntry> Catalog::at(std::string_view db_id) const {
    auto entry = find(db_id);
    if (!entry) throw Error(Errc::unknown_database, "unknown database '" + std::string(db_id) + "'");
    return entry;
}

std::vector<std::shared_ptr<const DatabaseEntry>> Catalog::entries() const {
    std::shared_lock lock(mutex_);
    std::vector<std::shared_ptr<const DatabaseEntry>> out;
    out.reserve(entries_.size());
    for (const auto& [_, e] : entries_) out.push_back(e);
    return out;
}

std::size_t Catalog::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

void Catalog::write_manifest_locked() const {
    nlohmann::json manifest = nlohmann::json::object();
    for (const auto& [db_id, e] : entries_) {
        manifest[db_id] = {{"display_name", e->display_name}, {"file", e->storage_ref.filename().string()}};
    }
    write_file_atomic(*storage_dir_ / "manifest.json", manifest.dump(2) + "\n");
}

} // namespace abacus
