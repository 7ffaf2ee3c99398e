#pragma once

#include "abacus/catalog.hpp"
#include "abacus/demopool.hpp"
#include "abacus/error.hpp"
#include "abacus/llm.hpp"
#include "abacus/pipeline.hpp"
#include "abacus/retrieval.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace abacus {

/// Everything the HTTP service needs. `data_dir` holds `sessions/`, `users.json`
/// and `pool.json`; the catalog keeps its own storage.
struct ServiceOptions {
    std::filesystem::path data_dir;
    PipelineConfig pipeline;
    RetrievalConfig retrieval;
    llm::GenerationParams generation;
    PromptTemplates prompts = PromptTemplates::defaults();
    ExecuteOptions exec;
    FusedConfig fused;
    int pbkdf2_iterations = 100000;
};

/// Maps an Errc to the HTTP status the service answers with.
int http_status_for(Errc code) noexcept;

/// Error and terminal events for one turn, in stream order after the stages and
/// tokens: sql, then result or error, then done.
std::vector<std::pair<std::string, nlohmann::json>> terminal_events(const Turn& turn, const std::string& session_id,
                                                                    std::size_t turn_index);

class Service {
public:
    Service(ServiceOptions options, std::shared_ptr<Catalog> catalog, std::shared_ptr<llm::Client> client,
            std::shared_ptr<const TableScorer> scorer, DemoPool initial_pool);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Requires bind().
    void run();
    void stop();

    std::size_t pool_size() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace abacus
