#include "abacus/llm.hpp"

#include "abacus/error.hpp"
#include "abacus/util.hpp"

#include <cctype>

namespace abacus::llm {

std::string_view to_string(Role role) noexcept {
    switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw Error(Errc::invalid_argument, "unknown chat role '" + std::string(s) + "'");
}

nlohmann::json EndpointConfig::redacted() const {
    return {{"base_url", base_url}, {"model_name", model_name}, {"api_key_set", !api_key.empty()}};
}

std::string Client::complete(std::span<const ChatMessage> messages, const GenerationParams& params,
                             const ChunkConsumer& on_chunk) {
    if (messages.empty() || messages.front().role != Role::system) {
        throw Error(Errc::invalid_argument, "chat request must start with a system message");
    }
    if (params.temperature < 0.0 || params.max_tokens <= 0) {
        throw Error(Errc::invalid_argument, "invalid generation parameters");
    }
    return do_complete(messages, params, on_chunk);
}

std::string render_messages(std::span<const ChatMessage> messages) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : messages) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return arr.dump();
}

std::string prompt_digest(std::span<const ChatMessage> messages) {
    return sha256_hex(render_messages(messages));
}

std::vector<std::string> word_chunks(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (std::isspace(static_cast<unsigned char>(text[i]))) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            out.emplace_back(text.substr(start, i - start));
            start = i;
        } else {
            ++i;
        }
    }
    if (start < text.size()) out.emplace_back(text.substr(start));
    return out;
}

// --- ScriptedMock -----------------------------------------------------------

ScriptedMock ScriptedMock::sequence(std::vector<Reply> replies) {
    ScriptedMock mock(Mode::sequence);
    mock.sequence_ = std::move(replies);
    return mock;
}

ScriptedMock ScriptedMock::keyed(std::map<std::string, Reply> replies) {
    ScriptedMock mock(Mode::keyed);
    mock.keyed_ = std::move(replies);
    return mock;
}

ScriptedMock ScriptedMock::from_strings(const std::vector<std::string>& replies) {
    std::vector<Reply> seq;
    seq.reserve(replies.size());
    for (const auto& r : replies) seq.push_back(word_chunks(r));
    return sequence(std::move(seq));
}

namespace {

ScriptedMock::Reply reply_from_json(const nlohmann::json& j) {
    if (j.is_string()) return word_chunks(j.get<std::string>());
    if (j.is_array()) return j.get<std::vector<std::string>>();
    throw Error(Errc::invalid_argument, "mock reply must be a string or an array of chunks");
}

} // namespace

ScriptedMock ScriptedMock::from_json(const nlohmann::json& script) {
    auto mode = script.value("mode", std::string("sequence"));
    const auto& replies = script.at("replies");
    if (mode == "sequence") {
        std::vector<Reply> seq;
        for (const auto& r : replies) seq.push_back(reply_from_json(r));
        return sequence(std::move(seq));
    }
    if (mode == "keyed") {
        std::map<std::string, Reply> keyed_replies;
        for (const auto& [k, v] : replies.items()) keyed_replies[k] = reply_from_json(v);
        return keyed(std::move(keyed_replies));
    }
    throw Error(Errc::invalid_argument, "unknown mock mode '" + mode + "'");
}

ScriptedMock ScriptedMock::from_file(const std::string& path) {
    try {
        return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_argument, "bad mock script " + path + ": " + e.what());
    }
}

ScriptedMock::ScriptedMock(ScriptedMock&& other) noexcept
    : mode_(other.mode_),
      sequence_(std::move(other.sequence_)),
      next_(other.next_),
      keyed_(std::move(other.keyed_)),
      calls_(std::move(other.calls_)) {}

std::vector<ScriptedMock::Call> ScriptedMock::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::size_t ScriptedMock::call_count() const {
    std::lock_guard lock(mutex_);
    return calls_.size();
}

std::size_t ScriptedMock::remaining() const {
    std::lock_guard lock(mutex_);
    return mode_ == Mode::sequence ? sequence_.size() - next_ : keyed_.size();
}

std::string ScriptedMock::do_complete(std::span<const ChatMessage> messages, const GenerationParams&,
                                      const ChunkConsumer& on_chunk) {
    std::lock_guard lock(mutex_);
    auto digest = prompt_digest(messages);
    const Reply* reply = nullptr;
    if (mode_ == Mode::sequence) {
        if (next_ >= sequence_.size()) {
            throw Error(Errc::mock_exhausted,
                        "scripted mock exhausted after " + std::to_string(sequence_.size()) + " replies");
        }
        reply = &sequence_[next_++];
    } else {
        auto it = keyed_.find(digest);
        if (it == keyed_.end()) throw Error(Errc::mock_miss, "scripted mock has no reply for prompt " + digest);
        reply = &it->second;
    }
    std::string full;
    for (const auto& chunk : *reply) {
        if (on_chunk) on_chunk(chunk);
        full += chunk;
    }
    calls_.push_back({std::vector<ChatMessage>(messages.begin(), messages.end()), digest, full});
    return full;
}

// --- SSE ---------------------------------------------------------------------

void SseDecoder::feed(std::string_view bytes) {
    buffer_.append(bytes);
    std::size_t start = 0;
    for (;;) {
        auto nl = buffer_.find('\n', start);
        if (nl == std::string::npos) break;
        std::string_view l(buffer_.data() + start, nl - start);
        if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
        line(l);
        start = nl + 1;
    }
    buffer_.erase(0, start);
}

void SseDecoder::finish() {
    if (!buffer_.empty()) {
        std::string rest = std::move(buffer_);
        buffer_.clear();
        line(rest);
    }
    dispatch();
}

void SseDecoder::line(std::string_view l) {
    if (l.empty()) {
        dispatch();
        return;
    }
    if (l.front() == ':') return; // comment
    auto colon = l.find(':');
    std::string_view field = l.substr(0, colon);
    std::string_view value = colon == std::string_view::npos ? std::string_view{} : l.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.remove_prefix(1);
    if (field == "event") {
        event_ = value;
    } else if (field == "data") {
        if (has_data_) data_.push_back('\n');
        data_.append(value);
        has_data_ = true;
    }
}

void SseDecoder::dispatch() {
    if (has_data_) handler_(event_.empty() ? "message" : event_, data_);
    event_.clear();
    data_.clear();
    has_data_ = false;
}

std::string format_sse(std::string_view event, std::string_view data) {
    std::string out = "event: ";
    out.append(event);
    out.push_back('\n');
    std::size_t start = 0;
    for (;;) {
        auto nl = data.find('\n', start);
        out += "data: ";
        out.append(data.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
        out.push_back('\n');
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    out.push_back('\n');
    return out;
}

} // namespace abacus::llm
