#pragma once

#include "knnicl/classifiers.hpp"
#include "knnicl/corpus.hpp"
#include "knnicl/embedding.hpp"
#include "knnicl/retrieval.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace knnicl {

enum class Role { System, User };

std::string_view to_string(Role role);

struct ChatMessage {
    Role role = Role::System;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

enum class PromptMode { Plain, Weighted, ZeroShot };

std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view name);

/// Model tag a prediction from a prompt of this mode carries.
ModelKind model_for(PromptMode mode);

struct PromptSpec {
    PromptMode mode = PromptMode::Plain;
    std::vector<ChatMessage> messages;
    LabelSpace label_space;
    std::string query_id;

    /// Canonical serialization; byte-identical for identical inputs.
    std::string serialize() const;
};

/// Message wording. `{text}`, `{label}` and `{labels}` are substituted.
/// Defaults reproduce the standard classification prompt; a per-model
/// override file (JSON with keys "example" and/or "instruction") replaces
/// either piece.
struct PromptTemplate {
    std::string example = "Example: We know that the classification for the text '{text}', we have answer: '{label}'.";
    std::string instruction =
        "According to the above provided examples, classify the following text. Answer as {labels} with no explanation.";

    static PromptTemplate load(const std::filesystem::path& path);
};

/// One system message per neighbor (most similar first), the instruction,
/// then the query text as the user message. Weighted mode appends
/// " (similarity: 0.xxxx)" to each example message.
PromptSpec build_icl_prompt(const NeighborSet& ns, const Example& query, const LabelSpace& labels, PromptMode mode,
                            const PromptTemplate& tmpl = {});

/// Instruction and query only.
PromptSpec build_zero_shot_prompt(const Example& query, const LabelSpace& labels, const PromptTemplate& tmpl = {});

/// Maps a raw completion onto exactly one label: trimmed case-insensitive
/// equality first, then a unique case-insensitive substring hit (a hit that
/// only occurs inside a longer label's hit does not count). Throws
/// ParseFailure otherwise.
std::string parse_label(std::string_view raw, const LabelSpace& labels);

struct ChatRequest {
    std::string model;
    double temperature = 0.0;
    std::vector<ChatMessage> messages;

    std::string to_json() const;
    static ChatRequest from_json(const std::string& body);
};

/// One attempt at a chat completion. Implementations throw TransportError on
/// network/service failure; retries belong to the caller.
class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::string model_name() const = 0;
    virtual std::string complete(const ChatRequest& request) = 0;
};

struct HttpChatConfig {
    /// Full completion URL, e.g. https://api.example.com/v1/chat/completions
    std::string url;
    std::string model;
    std::string token_env;
    std::chrono::seconds timeout{120};
};

/// OpenAI-style endpoint: reads choices[0].message.content, or a top-level
/// "content" string.
class HttpChatClient final : public ChatClient {
public:
    explicit HttpChatClient(HttpChatConfig config);
    std::string model_name() const override { return config_.model; }
    std::string complete(const ChatRequest& request) override;

private:
    HttpChatConfig config_;
};

/// In-process client driven by a script function. Thread-safe if the script is.
class ScriptedChatClient final : public ChatClient {
public:
    using Script = std::function<std::string(const ChatRequest&)>;

    ScriptedChatClient(std::string model, Script script) : model_(std::move(model)), script_(std::move(script)) {}

    std::string model_name() const override { return model_; }
    std::string complete(const ChatRequest& request) override {
        ++calls_;
        return script_(request);
    }
    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::string model_;
    Script script_;
    std::atomic<std::size_t> calls_{0};
};

/// Token-bucket limiter: `rate` tokens per second, bucket size `burst`.
/// A non-positive rate disables limiting.
class TokenBucket {
public:
    TokenBucket(double rate, double burst);
    void acquire();

private:
    double rate_;
    double burst_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
};

struct LlmCallPolicy {
    RetryPolicy retry{5, std::chrono::milliseconds(500), std::chrono::milliseconds(30'000)};
    TokenBucket* limiter = nullptr;
};

struct LlmResponse {
    std::string raw_text;
    std::optional<std::string> parsed_label;
    double latency_ms = 0.0;
    int attempt = 0;
};

/// Sends the request with transport retries; throws TransportError when all
/// attempts fail.
LlmResponse complete_with_retry(ChatClient& client, const ChatRequest& request, const LlmCallPolicy& policy);

inline constexpr std::string_view kAnswerReminder = "Answer with exactly one label.";

/// Temperature-0 classification. A parse failure is retried once with an
/// extra reminder message; exhaustion throws QueryFailed.
Prediction llm_predict(ChatClient& client, const PromptSpec& prompt, const LlmCallPolicy& policy = {});

/// As llm_predict, also returning the final raw response.
std::pair<Prediction, LlmResponse> llm_predict_detailed(ChatClient& client, const PromptSpec& prompt,
                                                        const LlmCallPolicy& policy = {});

struct RelevanceVerdict {
    std::string query_id;
    std::string example_id;
    bool relevant = false;
    std::string annotator_id;

    bool operator==(const RelevanceVerdict&) const = default;
};

/// Annotator id used for verdicts produced by an LLM client.
std::string llm_annotator_id(const ChatClient& client);

/// System message of the relevance-judgment prompt.
std::string relevance_instruction(std::string_view task_description);

/// User message of the relevance-judgment prompt.
std::string relevance_user_message(std::string_view query_text, std::string_view example_text);

std::vector<ChatMessage> build_relevance_prompt(const Example& query, const Neighbor& demo,
                                                std::string_view task_description);

/// "yes"/"no" (case-insensitive, leading word) after trimming.
std::optional<bool> parse_yes_no(std::string_view raw);

/// Boolean relevance of one demonstration for one query. Two unparseable
/// answers (or exhausted transport retries) throw AnnotationFailed.
RelevanceVerdict llm_annotate_relevance(ChatClient& client, const Example& query, const Neighbor& demo,
                                        std::string_view task_description, const LlmCallPolicy& policy = {});

} // namespace knnicl
