#include "abacus/config.hpp"

#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <cstdlib>

namespace abacus {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

llm::EndpointConfig endpoint_from_json(const nlohmann::json& j) {
    if (j.contains("api_key")) {
        throw Error(Errc::invalid_argument, "api_key must not appear in the config file; use the environment");
    }
    return {j.value("base_url", ""), "", j.value("model_name", "")};
}

} // namespace

AppConfig AppConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    AppConfig c;
    try {
        if (j.contains("data_dir")) c.data_dir = resolve(base, j["data_dir"].get<std::string>());
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        if (j.contains("endpoint")) {
            c.endpoint = endpoint_from_json(j["endpoint"]);
            c.api_key_env = j["endpoint"].value("api_key_env", c.api_key_env);
        }
        c.scorer = j.value("scorer", c.scorer);
        if (j.contains("embedding_endpoint")) c.embedding_endpoint = endpoint_from_json(j["embedding_endpoint"]);
        if (j.contains("pipeline")) c.pipeline = PipelineConfig::from_json(j["pipeline"]);
        if (j.contains("retrieval")) {
            const auto& r = j["retrieval"];
            c.retrieval.beam_width = r.value("beam_width", c.retrieval.beam_width);
            c.retrieval.max_hops = r.value("max_hops", c.retrieval.max_hops);
            c.retrieval.tables_per_hop = r.value("tables_per_hop", c.retrieval.tables_per_hop);
            auto agg = r.value("aggregation", std::string("sum"));
            if (agg != "sum" && agg != "max") throw Error(Errc::invalid_argument, "aggregation must be sum or max");
            c.retrieval.aggregation = agg == "sum" ? ScoreAggregation::sum : ScoreAggregation::max;
        }
        if (j.contains("generation")) {
            c.generation.temperature = j["generation"].value("temperature", c.generation.temperature);
            c.generation.max_tokens = j["generation"].value("max_tokens", c.generation.max_tokens);
        }
        if (j.contains("fused")) {
            const auto& f = j["fused"];
            c.fused.rounds = f.value("rounds", c.fused.rounds);
            c.fused.fusion_arity = f.value("fusion_arity", c.fused.fusion_arity);
            c.fused.additions_cap = f.value("additions_cap", c.fused.additions_cap);
            c.fused.random_seed = f.value("random_seed", c.fused.random_seed);
        }
        if (j.contains("prompts_dir")) c.prompts_dir = resolve(base, j["prompts_dir"].get<std::string>());
        if (j.contains("pool_file")) c.pool_file = resolve(base, j["pool_file"].get<std::string>());
        if (j.contains("mock_script")) c.mock_script = resolve(base, j["mock_script"].get<std::string>());
        c.pbkdf2_iterations = j.value("pbkdf2_iterations", c.pbkdf2_iterations);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("config: ") + e.what());
    }
    if (c.scorer != "bm25" && c.scorer != "embedding") {
        throw Error(Errc::invalid_argument, "scorer must be bm25 or embedding");
    }
    c.retrieval.validate();
    return c;
}

AppConfig AppConfig::load(const std::filesystem::path& file) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(file));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::invalid_argument, "config " + file.string() + ": " + e.what());
    }
    return from_json(j, file.parent_path());
}

nlohmann::json AppConfig::to_json() const {
    nlohmann::json j = {
        {"data_dir", data_dir.string()},
        {"host", host},
        {"port", port},
        {"endpoint", endpoint.redacted()},
        {"scorer", scorer},
        {"pipeline", pipeline.to_json()},
        {"retrieval",
         {{"beam_width", retrieval.beam_width},
          {"max_hops", retrieval.max_hops},
          {"tables_per_hop", retrieval.tables_per_hop},
          {"aggregation", retrieval.aggregation == ScoreAggregation::sum ? "sum" : "max"}}},
        {"generation", {{"temperature", generation.temperature}, {"max_tokens", generation.max_tokens}}},
        {"fused",
         {{"rounds", fused.rounds},
          {"fusion_arity", fused.fusion_arity},
          {"additions_cap", fused.additions_cap},
          {"random_seed", fused.random_seed}}},
    };
    j["endpoint"]["api_key_env"] = api_key_env;
    if (embedding_endpoint) j["embedding_endpoint"] = embedding_endpoint->redacted();
    if (prompts_dir) j["prompts_dir"] = prompts_dir->string();
    if (pool_file) j["pool_file"] = pool_file->string();
    if (mock_script) j["mock_script"] = mock_script->string();
    return j;
}

void apply_environment(AppConfig& cfg) {
    if (const char* key = std::getenv(cfg.api_key_env.c_str())) {
        cfg.endpoint.api_key = key;
        if (cfg.embedding_endpoint) cfg.embedding_endpoint->api_key = key;
    }
}

std::shared_ptr<llm::Client> make_client(const AppConfig& cfg, llm::LogSink log) {
    if (cfg.mock_script) return std::make_shared<llm::ScriptedMock>(llm::ScriptedMock::from_file(cfg.mock_script->string()));
    if (cfg.endpoint.base_url.empty() || cfg.endpoint.model_name.empty()) {
        throw Error(Errc::invalid_argument, "no LLM configured: set endpoint.base_url and endpoint.model_name, "
                                            "or a mock script");
    }
    return std::make_shared<llm::OpenAiClient>(cfg.endpoint, std::move(log));
}

std::shared_ptr<const TableScorer> make_scorer(const AppConfig& cfg) {
    if (cfg.scorer == "embedding") {
        if (!cfg.embedding_endpoint) throw Error(Errc::invalid_argument, "scorer=embedding needs embedding_endpoint");
        return std::make_shared<EmbeddingTableScorer>(std::make_shared<HttpEmbedder>(*cfg.embedding_endpoint));
    }
    return std::make_shared<Bm25TableScorer>();
}

} // namespace abacus
