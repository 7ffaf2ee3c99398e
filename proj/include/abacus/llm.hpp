#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace abacus::llm {

enum class Role { system, user, assistant };

std::string_view to_string(Role role) noexcept;
Role role_from_string(std::string_view s);

struct ChatMessage {
    Role role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct GenerationParams {
    double temperature = 0.0;
    int max_tokens = 1024;
};

struct EndpointConfig {
    std::string base_url;   ///< e.g. https://api.openai.com/v1
    std::string api_key;    ///< never logged or serialized
    std::string model_name;

    /// JSON without the key.
    nlohmann::json redacted() const;
};

using ChunkConsumer = std::function<void(std::string_view)>;

/// Chat-completion backend. Implementations must return exactly the
/// concatenation of the chunks they deliver to `on_chunk`.
class Client {
public:
    virtual ~Client() = default;

    /// Requires a non-empty message list that starts with a system message.
    std::string complete(std::span<const ChatMessage> messages, const GenerationParams& params = {},
                         const ChunkConsumer& on_chunk = {});

    virtual std::string model_name() const = 0;

protected:
    virtual std::string do_complete(std::span<const ChatMessage> messages, const GenerationParams& params,
                                    const ChunkConsumer& on_chunk) = 0;
};

/// Canonical JSON rendering of a message list; the input to `prompt_digest`.
std::string render_messages(std::span<const ChatMessage> messages);
/// Stable SHA-256 digest used to key scripted replies.
std::string prompt_digest(std::span<const ChatMessage> messages);

/// Deterministic offline backend. In sequence mode each call consumes the next
/// reply; in keyed mode the reply is looked up by prompt digest. A reply is a
/// list of chunks streamed in order. Calls are serialized.
class ScriptedMock final : public Client {
public:
    using Reply = std::vector<std::string>;

    static ScriptedMock sequence(std::vector<Reply> replies);
    static ScriptedMock keyed(std::map<std::string, Reply> replies);
    /// Sequence replies given as whole strings; each is streamed in word-sized chunks.
    static ScriptedMock from_strings(const std::vector<std::string>& replies);

    /// {"mode": "sequence", "replies": [str | [chunk...]]} or
    /// {"mode": "keyed", "replies": {digest: str | [chunk...]}}
    static ScriptedMock from_json(const nlohmann::json& script);
    static ScriptedMock from_file(const std::string& path);

    ScriptedMock(ScriptedMock&& other) noexcept;

    std::string model_name() const override { return "scripted-mock"; }

    struct Call {
        std::vector<ChatMessage> messages;
        std::string digest;
        std::string reply;
    };
    std::vector<Call> calls() const;
    std::size_t call_count() const;
    std::size_t remaining() const;

protected:
    std::string do_complete(std::span<const ChatMessage> messages, const GenerationParams& params,
                            const ChunkConsumer& on_chunk) override;

private:
    enum class Mode { sequence, keyed };
    ScriptedMock(Mode mode) : mode_(mode) {}

    Mode mode_;
    std::vector<Reply> sequence_;
    std::size_t next_ = 0;
    std::map<std::string, Reply> keyed_;
    std::vector<Call> calls_;
    mutable std::mutex mutex_;
};

/// Splits text into chunks that end after each whitespace run.
std::vector<std::string> word_chunks(std::string_view text);

/// Incremental server-sent-events decoder. Feed arbitrary byte slices; complete
/// events are delivered as (event name, data) with multi-line data joined by '\n'.
class SseDecoder {
public:
    using Handler = std::function<void(const std::string& event, const std::string& data)>;
    explicit SseDecoder(Handler handler) : handler_(std::move(handler)) {}

    void feed(std::string_view bytes);
    /// Dispatches a trailing event that lacked the terminating blank line.
    void finish();

private:
    void line(std::string_view l);
    void dispatch();

    Handler handler_;
    std::string buffer_;
    std::string event_;
    std::string data_;
    bool has_data_ = false;
};

std::string format_sse(std::string_view event, std::string_view data);

using LogSink = std::function<void(std::string_view)>;

/// OpenAI-compatible chat-completions client over HTTP(S). Streams via SSE when a
/// chunk consumer is given. Retries once on transport failure.
class OpenAiClient final : public Client {
public:
    explicit OpenAiClient(EndpointConfig config, LogSink log = {});

    std::string model_name() const override { return config_.model_name; }

    /// Request body as sent on the wire (contains no credentials).
    nlohmann::json request_body(std::span<const ChatMessage> messages, const GenerationParams& params,
                                bool stream) const;

protected:
    std::string do_complete(std::span<const ChatMessage> messages, const GenerationParams& params,
                            const ChunkConsumer& on_chunk) override;

private:
    std::string attempt(const nlohmann::json& body, const ChunkConsumer& on_chunk);

    EndpointConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
    LogSink log_;
};

} // namespace abacus::llm
