#pragma once

#include "abacus/catalog.hpp"
#include "abacus/error.hpp"
#include "abacus/llm.hpp"
#include "abacus/util.hpp"

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#ifndef ABACUS_SOURCE_DIR
#error "ABACUS_SOURCE_DIR must point at the source tree"
#endif

namespace abacus::testing {

inline std::filesystem::path source_dir() { return ABACUS_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }
inline std::filesystem::path fixtures_dir() { return source_dir() / "tests" / "fixtures"; }

/// Fresh directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("abacus-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Catalog stored under `storage` holding every script in data/databases.
inline std::unique_ptr<Catalog> fixture_catalog(const std::filesystem::path& storage) {
    auto catalog = std::make_unique<Catalog>(storage);
    for (const auto& f : std::filesystem::directory_iterator(data_dir() / "databases")) {
        if (f.path().extension() == ".sql") catalog->ingest_script(read_file(f.path()), f.path().stem().string());
    }
    return catalog;
}

/// Replies with the same text to every call.
class ConstantClient final : public llm::Client {
public:
    explicit ConstantClient(std::string reply) : reply_(std::move(reply)) {}
    std::string model_name() const override { return "constant"; }
    int calls() const { return calls_; }

protected:
    std::string do_complete(std::span<const llm::ChatMessage>, const llm::GenerationParams&,
                            const llm::ChunkConsumer& on_chunk) override {
        ++calls_;
        if (on_chunk) on_chunk(reply_);
        return reply_;
    }

private:
    std::string reply_;
    std::atomic<int> calls_{0};
};

/// True iff `fn` throws abacus::Error carrying `code`.
inline bool throws_code(Errc code, auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code() == code;
    }
    return false;
}

inline std::string sql_reply(const std::string& sql_text) { return "```sql\n" + sql_text + "\n```"; }

} // namespace abacus::testing
