#include "abacus/auth.hpp"

#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <regex>
#include <vector>

#include <nlohmann/json.hpp>

namespace abacus {

namespace {

std::string to_hex(const unsigned char* p, std::size_t n) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        out += digits[p[i] >> 4];
        out += digits[p[i] & 0xf];
    }
    return out;
}

bool constant_time_equal(const std::string& a, const std::string& b) {
    return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

} // namespace

std::string derive_password_digest(std::string_view password, std::string_view salt, int iterations) {
    unsigned char out[32];
    if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()),
                          reinterpret_cast<const unsigned char*>(salt.data()), static_cast<int>(salt.size()),
                          iterations, EVP_sha256(), sizeof out, out) != 1) {
        throw Error(Errc::io, "PBKDF2 failed");
    }
    return to_hex(out, sizeof out);
}

std::string random_hex(std::size_t bytes) {
    std::vector<unsigned char> buf(bytes);
    if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) throw Error(Errc::io, "RAND_bytes failed");
    return to_hex(buf.data(), buf.size());
}

UserStore::UserStore(std::filesystem::path file, int iterations) : file_(std::move(file)), iterations_(iterations) {
    if (iterations_ <= 0) throw Error(Errc::invalid_argument, "PBKDF2 iterations must be positive");
    if (!std::filesystem::exists(file_)) return;
    try {
        auto j = nlohmann::json::parse(read_file(file_));
        for (const auto& [name, rec] : j.items()) {
            users_[name] = {rec.at("salt").get<std::string>(), rec.at("digest").get<std::string>(),
                            rec.at("iterations").get<int>()};
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::io, "corrupt user file " + file_.string() + ": " + e.what());
    }
}

void UserStore::save_locked() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, rec] : users_) {
        j[name] = {{"salt", rec.salt}, {"digest", rec.digest}, {"iterations", rec.iterations}};
    }
    if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
    write_file_atomic(file_, j.dump(2) + "\n");
}

void UserStore::register_user(const std::string& username, const std::string& password) {
    static const std::regex ok("[A-Za-z0-9_.-]{1,64}");
    if (!std::regex_match(username, ok)) throw Error(Errc::invalid_argument, "invalid username");
    if (password.empty()) throw Error(Errc::invalid_argument, "empty password");
    auto salt = random_hex(16);
    auto digest = derive_password_digest(password, salt, iterations_);
    std::lock_guard lock(mutex_);
    if (users_.contains(username)) throw Error(Errc::duplicate_id, "user already exists: " + username);
    users_[username] = {salt, digest, iterations_};
    save_locked();
}

std::optional<std::string> UserStore::login(const std::string& username, const std::string& password) {
    Record rec;
    {
        std::lock_guard lock(mutex_);
        auto it = users_.find(username);
        if (it == users_.end()) return std::nullopt;
        rec = it->second;
    }
    if (!constant_time_equal(derive_password_digest(password, rec.salt, rec.iterations), rec.digest)) {
        return std::nullopt;
    }
    auto token = random_hex(32);
    std::lock_guard lock(mutex_);
    tokens_[token] = username;
    return token;
}

std::optional<std::string> UserStore::resolve(const std::string& token) const {
    std::lock_guard lock(mutex_);
    auto it = tokens_.find(token);
    if (it == tokens_.end()) return std::nullopt;
    return it->second;
}

} // namespace abacus
