#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace abacus {

enum class Errc {
    invalid_argument,
    io,
    // catalog
    corrupt_database,
    duplicate_id,
    empty_database,
    unknown_database,
    unknown_table,
    // sqlkit
    unterminated_string,
    parse_failure,
    // retrieval
    empty_catalog,
    no_candidates,
    // llm
    llm_transport,
    llm_bad_response,
    mock_exhausted,
    mock_miss,
    // demopool
    empty_pool,
    insufficient_pool,
    invalid_upload,
    // pipeline
    no_sql_found,
    // evalharness
    unknown_format,
    schema_mismatch,
};

std::string_view to_string(Errc code) noexcept;

/// Single exception type for every module; `code()` selects the failure class,
/// `status()` carries the HTTP status for transport failures (0 otherwise).
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message, int status = 0)
        : std::runtime_error(message), code_(code), status_(status) {}

    Errc code() const noexcept { return code_; }
    int status() const noexcept { return status_; }

    bool is_llm_failure() const noexcept {
        return code_ == Errc::llm_transport || code_ == Errc::llm_bad_response ||
               code_ == Errc::mock_exhausted || code_ == Errc::mock_miss;
    }

private:
    Errc code_;
    int status_;
};

} // namespace abacus
