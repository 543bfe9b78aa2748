#pragma once

#include "knnicl/embedding.hpp"
#include "knnicl/llm.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

// Scripted stand-ins for the chat and embedding services, for offline runs
// and tests. Scripts read the prompts produced by the default templates.
namespace knnicl::mock {

struct ClassificationRequest {
    struct Demo {
        std::string text;
        std::string label;
        std::optional<double> similarity;
    };
    std::vector<Demo> demos;
    std::vector<std::string> labels;
    std::string query;
};

/// Recovers demos, label list and query from a classification prompt.
std::optional<ClassificationRequest> parse_classification_request(const ChatRequest& request);

struct RelevanceRequest {
    std::string task;
    std::string query;
    std::string example;
};

std::optional<RelevanceRequest> parse_relevance_request(const ChatRequest& request);

/// |tokens(a) & tokens(b)| / |tokens(a) | tokens(b)| over tokenize() sets.
double token_jaccard(std::string_view a, std::string_view b);

using Script = ScriptedChatClient::Script;

/// Answers the most frequent demo label; ties go to the label seen first
/// (most similar). Zero-shot prompts get the first listed label.
Script majority_echo();

/// "Yes" iff token_jaccard(query, example) >= threshold.
Script overlap_annotator(double threshold = 0.5);

struct FollowOptions {
    /// Demo relevance uses the overlap annotator rule with this threshold.
    double overlap_threshold = 0.5;
    std::uint64_t seed = 0;
    /// Fallback answer; defaults to the first listed label.
    std::optional<std::string> prior_label;
};

/// Follows the demonstrations (majority echo) with probability equal to the
/// fraction of relevant demos, else answers the prior label. The coin is a
/// hash of (query text, seed), so answers are deterministic.
Script relevance_following(FollowOptions options);

/// Always replies with `reply`.
Script fixed(std::string reply);

/// Routes relevance-judgment prompts to `annotator` and everything else to
/// `classifier`.
Script combined(Script classifier, Script annotator);

/// Local HTTP server speaking both wire contracts:
///   POST /v1/chat/completions  {model, temperature, messages} -> OpenAI-style choices
///   POST /embed                {texts} -> {vectors}
class MockServer {
public:
    MockServer(Script chat, std::shared_ptr<EmbeddingProvider> embedder = nullptr);
    ~MockServer();
    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    /// Binds 127.0.0.1 on `port` (0 = any free port) and serves in a thread.
    void start(int port = 0);
    void stop();

    int port() const noexcept { return port_; }
    std::string chat_url() const;
    std::string embed_url() const;

    /// The next `n` requests (either endpoint) answer HTTP 503.
    void fail_next(int n) { fail_next_ = n; }
    std::size_t requests() const noexcept { return requests_.load(); }
    /// Authorization header of the most recent request.
    std::string last_authorization() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
    std::atomic<int> fail_next_{0};
    std::atomic<std::size_t> requests_{0};
};

} // namespace knnicl::mock
