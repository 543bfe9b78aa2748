#include "knnicl/mock_llm.hpp"

#include "knnicl/classifiers.hpp"
#include "knnicl/hashing.hpp"

#include <httplib.h>
#include <json.hpp>

#include <map>
#include <mutex>
#include <set>

namespace knnicl::mock {

namespace {

using nlohmann::json;

constexpr std::string_view kExamplePrefix = "Example: We know that the classification for the text '";
constexpr std::string_view kAnswerMarker = "', we have answer: '";
constexpr std::string_view kSimilarityMarker = "'. (similarity: ";
constexpr std::string_view kAnswerAs = "Answer as ";
constexpr std::string_view kNoExplanation = " with no explanation.";
constexpr std::string_view kRelevancePrefix =
    "You judge whether an example is relevant to classifying the given input for the task: ";
constexpr std::string_view kRelevanceSuffix = ". Answer Yes or No with no explanation.";

std::optional<ClassificationRequest::Demo> parse_demo(std::string_view msg) {
    if (!msg.starts_with(kExamplePrefix)) return std::nullopt;
    const auto marker = msg.rfind(kAnswerMarker);
    if (marker == std::string_view::npos || marker < kExamplePrefix.size()) return std::nullopt;
    ClassificationRequest::Demo d;
    d.text = std::string(msg.substr(kExamplePrefix.size(), marker - kExamplePrefix.size()));
    auto rest = msg.substr(marker + kAnswerMarker.size());
    if (auto sim = rest.rfind(kSimilarityMarker); sim != std::string_view::npos && rest.ends_with(")")) {
        d.label = std::string(rest.substr(0, sim));
        auto num = rest.substr(sim + kSimilarityMarker.size());
        num.remove_suffix(1);
        d.similarity = std::stod(std::string(num));
    } else if (rest.ends_with("'.")) {
        d.label = std::string(rest.substr(0, rest.size() - 2));
    } else {
        return std::nullopt;
    }
    return d;
}

std::vector<std::string> split_labels(std::string_view list) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto comma = list.find(", ", start);
        out.emplace_back(list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 2;
    }
    return out;
}

// Ties go to the higher similarity sum when the prompt shows similarities,
// otherwise to the label of the earliest tied demonstration.
std::string majority_label(const ClassificationRequest& req) {
    if (req.demos.empty()) return req.labels.empty() ? std::string("?") : req.labels.front();
    std::map<std::string, std::size_t> counts;
    std::map<std::string, double> sims;
    bool have_sims = true;
    for (const auto& d : req.demos) {
        ++counts[d.label];
        if (d.similarity) sims[d.label] += *d.similarity;
        else have_sims = false;
    }
    std::string best;
    std::size_t best_count = 0;
    for (const auto& d : req.demos) {
        const auto c = counts[d.label];
        if (c > best_count) {
            best = d.label;
            best_count = c;
        } else if (have_sims && c == best_count && d.label != best) {
            const double s = sims[d.label], bs = sims[best];
            if (s > bs || (s == bs && d.label < best)) best = d.label;
        }
    }
    return best;
}

std::string chat_response_json(const std::string& content) {
    return json{{"object", "chat.completion"},
                {"choices", json::array({{{"index", 0},
                                          {"message", {{"role", "assistant"}, {"content", content}}},
                                          {"finish_reason", "stop"}}})}}
        .dump();
}

} // namespace

std::optional<ClassificationRequest> parse_classification_request(const ChatRequest& request) {
    ClassificationRequest out;
    bool have_instruction = false;
    for (const auto& m : request.messages) {
        if (m.role == Role::User) {
            out.query = m.content;
            continue;
        }
        if (auto demo = parse_demo(m.content)) {
            out.demos.push_back(std::move(*demo));
            continue;
        }
        const std::string_view c = m.content;
        auto a = c.find(kAnswerAs);
        auto b = c.rfind(kNoExplanation);
        if (a != std::string_view::npos && b != std::string_view::npos && b > a) {
            out.labels = split_labels(c.substr(a + kAnswerAs.size(), b - a - kAnswerAs.size()));
            have_instruction = true;
        }
    }
    if (!have_instruction) return std::nullopt;
    return out;
}

std::optional<RelevanceRequest> parse_relevance_request(const ChatRequest& request) {
    if (request.messages.size() < 2) return std::nullopt;
    std::string_view sys = request.messages[0].content;
    if (!sys.starts_with(kRelevancePrefix) || !sys.ends_with(kRelevanceSuffix)) return std::nullopt;
    RelevanceRequest out;
    out.task = std::string(sys.substr(kRelevancePrefix.size(), sys.size() - kRelevancePrefix.size() - kRelevanceSuffix.size()));
    std::string_view user = request.messages[1].content;
    constexpr std::string_view kInput = "Input: ";
    constexpr std::string_view kExample = "\nExample: ";
    auto ex = user.rfind(kExample);
    if (!user.starts_with(kInput) || ex == std::string_view::npos) return std::nullopt;
    out.query = std::string(user.substr(kInput.size(), ex - kInput.size()));
    out.example = std::string(user.substr(ex + kExample.size()));
    return out;
}

double token_jaccard(std::string_view a, std::string_view b) {
    auto ta = tokenize(a), tb = tokenize(b);
    std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

Script majority_echo() {
    return [](const ChatRequest& req) -> std::string {
        auto parsed = parse_classification_request(req);
        if (!parsed) return "???";
        return majority_label(*parsed);
    };
}

Script overlap_annotator(double threshold) {
    return [threshold](const ChatRequest& req) -> std::string {
        auto parsed = parse_relevance_request(req);
        if (!parsed) return "???";
        return token_jaccard(parsed->query, parsed->example) >= threshold ? "Yes" : "No";
    };
}

Script relevance_following(FollowOptions options) {
    return [options](const ChatRequest& req) -> std::string {
        auto parsed = parse_classification_request(req);
        if (!parsed) return "???";
        const std::string prior =
            options.prior_label ? *options.prior_label : (parsed->labels.empty() ? "?" : parsed->labels.front());
        if (parsed->demos.empty()) return prior;
        std::size_t relevant = 0;
        for (const auto& d : parsed->demos)
            if (token_jaccard(parsed->query, d.text) >= options.overlap_threshold) ++relevant;
        const double relevance = static_cast<double>(relevant) / static_cast<double>(parsed->demos.size());
        const double coin = unit_interval(mix64(fnv1a64(parsed->query) ^ mix64(options.seed)));
        return coin < relevance ? majority_label(*parsed) : prior;
    };
}

Script fixed(std::string reply) {
    return [reply = std::move(reply)](const ChatRequest&) { return reply; };
}

Script combined(Script classifier, Script annotator) {
    return [classifier = std::move(classifier), annotator = std::move(annotator)](const ChatRequest& req) {
        if (parse_relevance_request(req)) return annotator(req);
        return classifier(req);
    };
}

struct MockServer::Impl {
    Script chat;
    std::shared_ptr<EmbeddingProvider> embedder;
    httplib::Server server;
    std::thread thread;
    mutable std::mutex auth_mutex;
    std::string last_auth;
};

MockServer::MockServer(Script chat, std::shared_ptr<EmbeddingProvider> embedder) : impl_(std::make_unique<Impl>()) {
    impl_->chat = std::move(chat);
    impl_->embedder = std::move(embedder);

    auto gate = [this](const httplib::Request& req, httplib::Response& res) {
        ++requests_;
        {
            std::lock_guard lock(impl_->auth_mutex);
            impl_->last_auth = req.get_header_value("Authorization");
        }
        if (fail_next_.load() > 0) {
            --fail_next_;
            res.status = 503;
            res.set_content(R"({"error":"injected failure"})", "application/json");
            return false;
        }
        return true;
    };

    impl_->server.Post("/v1/chat/completions", [this, gate](const httplib::Request& req, httplib::Response& res) {
        if (!gate(req, res)) return;
        try {
            auto request = ChatRequest::from_json(req.body);
            res.set_content(chat_response_json(impl_->chat(request)), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    });

    impl_->server.Post("/embed", [this, gate](const httplib::Request& req, httplib::Response& res) {
        if (!gate(req, res)) return;
        if (!impl_->embedder) {
            res.status = 404;
            return;
        }
        try {
            auto texts = json::parse(req.body).at("texts").get<std::vector<std::string>>();
            auto vectors = impl_->embedder->embed_batch(texts);
            json rows = json::array();
            for (const auto& v : vectors) rows.push_back(v.values);
            res.set_content(json{{"vectors", rows}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    });
}

MockServer::~MockServer() { stop(); }

void MockServer::start(int port) {
    if (port == 0) {
        port_ = impl_->server.bind_to_any_port("127.0.0.1");
    } else if (impl_->server.bind_to_port("127.0.0.1", port)) {
        port_ = port;
    } else {
        port_ = -1;
    }
    if (port_ <= 0) throw std::runtime_error("mock server: cannot bind port " + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void MockServer::stop() {
    if (impl_ && impl_->thread.joinable()) {
        impl_->server.stop();
        impl_->thread.join();
    }
}

std::string MockServer::chat_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

std::string MockServer::embed_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/embed"; }

std::string MockServer::last_authorization() const {
    std::lock_guard lock(impl_->auth_mutex);
    return impl_->last_auth;
}

} // namespace knnicl::mock
