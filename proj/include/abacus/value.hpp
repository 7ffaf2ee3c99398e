#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace abacus {

/// Blobs are carried as a digest, never as raw bytes.
struct BlobDigest {
    std::string sha256;
    bool operator==(const BlobDigest&) const = default;
};

using Null = std::monostate;
using Value = std::variant<Null, std::int64_t, double, std::string, BlobDigest>;
using Row = std::vector<Value>;

nlohmann::json to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);

/// Column names plus rows; what both previews and executions return.
struct ResultTable {
    std::vector<std::string> columns;
    std::vector<Row> rows;
};

} // namespace abacus
