#pragma once

#include "abacus/demopool.hpp"
#include "abacus/llm.hpp"
#include "abacus/pipeline.hpp"
#include "abacus/retrieval.hpp"

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace abacus {

/// Service and CLI configuration. The LLM API key is never read from the file;
/// it comes from the environment variable named by `api_key_env`.
struct AppConfig {
    std::filesystem::path data_dir = "abacus-data";
    std::string host = "127.0.0.1";
    int port = 8080;

    llm::EndpointConfig endpoint;
    std::string api_key_env = "ABACUS_API_KEY";
    /// "bm25" or "embedding"; the latter uses `embedding_endpoint`.
    std::string scorer = "bm25";
    std::optional<llm::EndpointConfig> embedding_endpoint;

    PipelineConfig pipeline;
    RetrievalConfig retrieval;
    llm::GenerationParams generation;
    FusedConfig fused;
    std::optional<std::filesystem::path> prompts_dir;
    std::optional<std::filesystem::path> pool_file;  ///< seed pool loaded when data_dir has none
    std::optional<std::filesystem::path> mock_script; ///< offline scripted replies instead of the endpoint
    int pbkdf2_iterations = 100000;

    static AppConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    /// Relative paths in the file resolve against the file's directory.
    static AppConfig load(const std::filesystem::path& file);
    /// Snapshot without credentials.
    nlohmann::json to_json() const;
};

/// Fills `endpoint.api_key` (and the embedding key) from the environment.
void apply_environment(AppConfig& cfg);

/// The configured chat client: scripted mock when `mock_script` is set,
/// otherwise the OpenAI-compatible endpoint. Throws invalid_argument when
/// neither is usable.
std::shared_ptr<llm::Client> make_client(const AppConfig& cfg, llm::LogSink log = {});
std::shared_ptr<const TableScorer> make_scorer(const AppConfig& cfg);

} // namespace abacus
