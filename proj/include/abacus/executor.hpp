#pragma once

#include "abacus/catalog.hpp"
#include "abacus/value.hpp"

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace abacus {

enum class ExecErrorKind { syntax, schema, runtime, timeout, rejected };

std::string_view to_string(ExecErrorKind kind) noexcept;
ExecErrorKind exec_error_kind_from_string(std::string_view s);

struct ExecError {
    std::string message;
    ExecErrorKind kind;
    bool operator==(const ExecError&) const = default;
};

/// Columns and rows, or an error; never both.
struct ExecutionResult {
    std::vector<std::string> columns;
    std::vector<Row> rows;
    bool truncated = false;
    std::optional<ExecError> error;

    bool ok() const { return !error.has_value(); }
};

nlohmann::json to_json(const ExecutionResult& r);
ExecutionResult execution_result_from_json(const nlohmann::json& j);

struct ExecuteOptions {
    std::size_t row_cap = 10000;
    std::chrono::milliseconds time_cap{5000};
};

/// Runs one read-only statement on its own connection. Every failure is
/// reported inside the result; nothing is thrown for bad SQL.
ExecutionResult execute(const DatabaseEntry& entry, std::string_view sql, const ExecuteOptions& opts = {});

struct ComparisonPolicy {
    bool ordered = false;
    double float_tolerance = 1e-6; ///< relative

    static ComparisonPolicy for_gold(std::string_view gold_sql);
};

/// Numbers compare with relative tolerance (integers exactly against integers),
/// NULL only equals NULL, text and blobs compare exactly.
bool values_equal(const Value& a, const Value& b, double rel_tol) noexcept;

/// Positional row comparison; row sequences when ordered, row multisets otherwise.
/// An errored side never matches.
bool compare_results(const ExecutionResult& pred, const ExecutionResult& gold, const ComparisonPolicy& policy);

} // namespace abacus
