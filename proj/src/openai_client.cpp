#include "abacus/error.hpp"
#include "abacus/llm.hpp"

#include <httplib.h>

#include <optional>

namespace abacus::llm {

namespace {

struct TransportFailure {
    std::string message;
    int status = 0;
};

} // namespace

OpenAiClient::OpenAiClient(EndpointConfig config, LogSink log) : config_(std::move(config)), log_(std::move(log)) {
    std::string url = config_.base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(Errc::invalid_argument, "base_url needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
}

nlohmann::json OpenAiClient::request_body(std::span<const ChatMessage> messages, const GenerationParams& params,
                                          bool stream) const {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return {{"model", config_.model_name},
            {"messages", std::move(msgs)},
            {"temperature", params.temperature},
            {"max_tokens", params.max_tokens},
            {"stream", stream}};
}

std::string OpenAiClient::do_complete(std::span<const ChatMessage> messages, const GenerationParams& params,
                                      const ChunkConsumer& on_chunk) {
    auto body = request_body(messages, params, static_cast<bool>(on_chunk));
    bool delivered = false;
    ChunkConsumer tracking;
    if (on_chunk) {
        tracking = [&](std::string_view c) {
            delivered = true;
            on_chunk(c);
        };
    }
    try {
        return attempt(body, tracking);
    } catch (const TransportFailure& first) {
        if (delivered) throw Error(Errc::llm_transport, first.message, first.status);
        if (log_) log_("transport failure, retrying once: " + first.message);
        try {
            return attempt(body, tracking);
        } catch (const TransportFailure& second) {
            throw Error(Errc::llm_transport, second.message, second.status);
        }
    }
}

std::string OpenAiClient::attempt(const nlohmann::json& body, const ChunkConsumer& on_chunk) {
    httplib::Client cli(scheme_host_port_);
    cli.set_connection_timeout(10, 0);
    cli.set_read_timeout(300, 0);
    httplib::Headers headers = {{"Accept", on_chunk ? "text/event-stream" : "application/json"}};
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    const std::string path = path_prefix_ + "/chat/completions";
    const std::string payload = body.dump();
    if (log_) log_("POST " + scheme_host_port_ + path + " " + payload);

    if (!on_chunk) {
        auto res = cli.Post(path, headers, payload, "application/json");
        if (!res) throw TransportFailure{"request failed: " + httplib::to_string(res.error())};
        if (log_) log_("HTTP " + std::to_string(res->status) + " " + res->body);
        if (res->status != 200) {
            throw TransportFailure{"HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500), res->status};
        }
        try {
            auto reply = nlohmann::json::parse(res->body);
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::llm_bad_response, std::string("unparseable completion: ") + e.what());
        }
    }

    std::string text;
    std::string raw;
    bool done = false;
    std::optional<Error> bad;
    SseDecoder decoder([&](const std::string&, const std::string& data) {
        if (done || bad) return;
        if (data == "[DONE]") {
            done = true;
            return;
        }
        try {
            auto j = nlohmann::json::parse(data);
            const auto& delta = j.at("choices").at(0).at("delta");
            if (delta.contains("content") && delta["content"].is_string()) {
                auto piece = delta["content"].get<std::string>();
                if (!piece.empty()) {
                    text += piece;
                    on_chunk(piece);
                }
            }
        } catch (const nlohmann::json::exception& e) {
            bad = Error(Errc::llm_bad_response, std::string("unparseable stream delta: ") + e.what());
        }
    });

    httplib::Request req;
    req.method = "POST";
    req.path = path;
    req.headers = headers;
    req.body = payload;
    req.set_header("Content-Type", "application/json");
    int status = 0;
    req.response_handler = [&](const httplib::Response& r) {
        status = r.status;
        return true;
    };
    req.content_receiver = [&](const char* data, size_t len, uint64_t, uint64_t) {
        if (status != 200) {
            raw.append(data, len);
        } else {
            decoder.feed(std::string_view(data, len));
        }
        return true;
    };
    httplib::Response res;
    httplib::Error err = httplib::Error::Success;
    if (!cli.send(req, res, err)) {
        throw TransportFailure{"request failed: " + httplib::to_string(err), status};
    }
    decoder.finish();
    if (log_) log_("HTTP " + std::to_string(res.status) + " streamed " + (status == 200 ? text : raw));
    if (res.status != 200) {
        throw TransportFailure{"HTTP " + std::to_string(res.status) + ": " + raw.substr(0, 500), res.status};
    }
    if (bad) throw *bad;
    return text;
}

} // namespace abacus::llm
