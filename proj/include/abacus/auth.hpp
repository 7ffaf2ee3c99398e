#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>

namespace abacus {

/// PBKDF2-HMAC-SHA256, hex encoded.
std::string derive_password_digest(std::string_view password, std::string_view salt, int iterations);
std::string random_hex(std::size_t bytes);

/// Users persisted as salted digests in a JSON file; bearer tokens live in memory
/// and are invalidated by a restart.
class UserStore {
public:
    explicit UserStore(std::filesystem::path file, int iterations = 100000);

    /// Throws duplicate_id for a taken name, invalid_argument for a bad name or empty password.
    void register_user(const std::string& username, const std::string& password);
    /// Token on success, nullopt on bad credentials.
    std::optional<std::string> login(const std::string& username, const std::string& password);
    std::optional<std::string> resolve(const std::string& token) const;

private:
    struct Record {
        std::string salt;
        std::string digest;
        int iterations;
    };
    void save_locked() const;

    std::filesystem::path file_;
    int iterations_;
    std::map<std::string, Record> users_;
    std::map<std::string, std::string> tokens_;
    mutable std::mutex mutex_;
};

} // namespace abacus
