#pragma once

#include "abacus/value.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace abacus {

struct ForeignRef {
    std::string table;
    std::string column;
    bool operator==(const ForeignRef&) const = default;
};

struct ColumnSchema {
    std::string name;
    std::string declared_type;
    bool is_primary_key = false;
    std::optional<ForeignRef> foreign_ref;
};

struct TableSchema {
    std::string name;
    std::vector<ColumnSchema> columns;
    std::int64_t row_count = 0;

    const ColumnSchema* find_column(std::string_view column) const;
};

/// One ingested database. Immutable once registered; names compare case-insensitively.
struct DatabaseEntry {
    std::string db_id;
    std::string display_name;
    std::vector<TableSchema> tables;
    std::filesystem::path storage_ref;

    const TableSchema* find_table(std::string_view table) const;
    std::vector<std::string> table_names() const;
};

/// Reads schema and FK constraints out of a single-file SQLite database.
/// Throws corrupt_database / empty_database.
DatabaseEntry read_database(const std::filesystem::path& file, std::string db_id, std::string display_name);

/// DDL-style rendering: one CREATE TABLE block per table, catalog order.
/// `subset` restricts output to the named tables (unknown names throw unknown_table).
std::string serialize_schema(const DatabaseEntry& entry,
                             const std::optional<std::vector<std::string>>& subset = std::nullopt);

ResultTable preview_rows(const DatabaseEntry& entry, std::string_view table, int limit);

/// Creates a database file by running an SQL script. Used for fixtures and `ingest --sql`.
void materialize_script(std::string_view sql_script, const std::filesystem::path& out_file);

/// Registry of databases. With a storage directory the catalog copies ingested files
/// into it and keeps `manifest.json` ({db_id: {display_name, file}}) in sync.
class Catalog {
public:
    Catalog() = default;
    explicit Catalog(std::filesystem::path storage_dir);

    Catalog(const Catalog&) = delete;
    Catalog& operator=(const Catalog&) = delete;

    /// Reopens every database listed in the storage manifest.
    static std::unique_ptr<Catalog> open(const std::filesystem::path& storage_dir);

    std::shared_ptr<const DatabaseEntry> ingest_database(const std::filesystem::path& file, const std::string& db_id,
                                                         std::string display_name = {}, bool replace = false);
    std::shared_ptr<const DatabaseEntry> ingest_bytes(std::string_view bytes, const std::string& db_id,
                                                      std::string display_name = {}, bool replace = false);
    std::shared_ptr<const DatabaseEntry> ingest_script(std::string_view sql_script, const std::string& db_id,
                                                       std::string display_name = {}, bool replace = false);

    std::shared_ptr<const DatabaseEntry> find(std::string_view db_id) const;
    /// Throws unknown_database.
    std::shared_ptr<const DatabaseEntry> at(std::string_view db_id) const;
    bool contains(std::string_view db_id) const { return find(db_id) != nullptr; }

    /// Snapshot ordered by db_id.
    std::vector<std::shared_ptr<const DatabaseEntry>> entries() const;
    std::size_t size() const;
    bool empty() const { return size() == 0; }

    const std::optional<std::filesystem::path>& storage_dir() const { return storage_dir_; }

private:
    std::shared_ptr<const DatabaseEntry> register_file(const std::filesystem::path& file, const std::string& db_id,
                                                       std::string display_name, bool replace);
    void write_manifest_locked() const;

    std::optional<std::filesystem::path> storage_dir_;
    mutable std::shared_mutex mutex_;
    std::mutex ingest_mutex_;
    std::map<std::string, std::shared_ptr<const DatabaseEntry>> entries_;
};

} // namespace abacus
