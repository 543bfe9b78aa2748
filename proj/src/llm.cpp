#include "knnicl/llm.hpp"

#include "knnicl/errors.hpp"
#include "knnicl/hashing.hpp"
#include "knnicl/net.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

namespace knnicl {

namespace {

using nlohmann::json;

// Single pass, so substituted values are never rescanned for placeholders.
std::string render(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values) {
    std::string out;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i);
            if (close != std::string_view::npos) {
                auto it = values.find(tmpl.substr(i + 1, close - i - 1));
                if (it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

std::string join_labels(const LabelSpace& labels) {
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) out += ", ";
        out += labels[i];
    }
    return out;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool is_trim_byte(unsigned char c) { return std::isspace(c) || std::ispunct(c); }

// Strips ASCII whitespace/punctuation and UTF-8 curly quotes from both ends.
std::string_view trim(std::string_view s) {
    static constexpr std::string_view kCurly[] = {"\xE2\x80\x98", "\xE2\x80\x99", "\xE2\x80\x9C", "\xE2\x80\x9D"};
    bool changed = true;
    while (changed && !s.empty()) {
        changed = false;
        if (is_trim_byte(static_cast<unsigned char>(s.front()))) {
            s.remove_prefix(1);
            changed = true;
        } else if (is_trim_byte(static_cast<unsigned char>(s.back()))) {
            s.remove_suffix(1);
            changed = true;
        } else {
            for (auto q : kCurly) {
                if (s.starts_with(q)) {
                    s.remove_prefix(q.size());
                    changed = true;
                } else if (s.ends_with(q)) {
                    s.remove_suffix(q.size());
                    changed = true;
                }
            }
        }
    }
    return s;
}

Role parse_role(std::string_view name) {
    if (name == "system") return Role::System;
    if (name == "user") return Role::User;
    throw ContractError("unsupported chat role '" + std::string(name) + "'");
}

json messages_json(const std::vector<ChatMessage>& messages) {
    json arr = json::array();
    for (const auto& m : messages) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return arr;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

} // namespace

std::string_view to_string(Role role) { return role == Role::System ? "system" : "user"; }

std::string_view to_string(PromptMode mode) {
    switch (mode) {
    case PromptMode::Plain: return "plain";
    case PromptMode::Weighted: return "weighted";
    case PromptMode::ZeroShot: return "zeroshot";
    }
    return "plain";
}

PromptMode parse_prompt_mode(std::string_view name) {
    if (name == "plain") return PromptMode::Plain;
    if (name == "weighted") return PromptMode::Weighted;
    if (name == "zeroshot") return PromptMode::ZeroShot;
    throw ConfigError("unknown prompt mode '" + std::string(name) + "'");
}

ModelKind model_for(PromptMode mode) {
    switch (mode) {
    case PromptMode::Plain: return ModelKind::Llm;
    case PromptMode::Weighted: return ModelKind::LlmWeighted;
    case PromptMode::ZeroShot: return ModelKind::LlmZeroShot;
    }
    return ModelKind::Llm;
}

std::string PromptSpec::serialize() const {
    json j = {{"mode", to_string(mode)},
              {"query_id", query_id},
              {"labels", label_space.labels()},
              {"messages", messages_json(messages)}};
    return j.dump();
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open prompt template " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("prompt template " + path.string() + ": " + e.what());
    }
    PromptTemplate t;
    if (j.contains("example")) t.example = j.at("example").get<std::string>();
    if (j.contains("instruction")) t.instruction = j.at("instruction").get<std::string>();
    return t;
}

PromptSpec build_icl_prompt(const NeighborSet& ns, const Example& query, const LabelSpace& labels, PromptMode mode,
                            const PromptTemplate& tmpl) {
    if (mode == PromptMode::ZeroShot) return build_zero_shot_prompt(query, labels, tmpl);
    if (ns.neighbors.empty()) throw ContractError("build_icl_prompt: empty neighbor set");
    PromptSpec p{mode, {}, labels, query.id};
    for (const auto& n : ns.neighbors) {
        std::string msg = render(tmpl.example, {{"text", n.text}, {"label", n.label}});
        if (mode == PromptMode::Weighted) {
            char sim[48];
            std::snprintf(sim, sizeof sim, " (similarity: %.4f)", n.similarity);
            msg += sim;
        }
        p.messages.push_back({Role::System, std::move(msg)});
    }
    p.messages.push_back({Role::System, render(tmpl.instruction, {{"labels", join_labels(labels)}})});
    p.messages.push_back({Role::User, query.text});
    return p;
}

PromptSpec build_zero_shot_prompt(const Example& query, const LabelSpace& labels, const PromptTemplate& tmpl) {
    PromptSpec p{PromptMode::ZeroShot, {}, labels, query.id};
    p.messages.push_back({Role::System, render(tmpl.instruction, {{"labels", join_labels(labels)}})});
    p.messages.push_back({Role::User, query.text});
    return p;
}

std::string parse_label(std::string_view raw, const LabelSpace& labels) {
    const std::string norm = lower(trim(raw));
    std::vector<std::string> keys;
    for (const auto& l : labels.labels()) keys.push_back(lower(trim(l)));

    for (std::size_t i = 0; i < keys.size(); ++i)
        if (!keys[i].empty() && norm == keys[i]) return labels[i];

    struct Hit {
        std::size_t label, begin, end;
    };
    std::vector<Hit> hits;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (keys[i].empty()) continue;
        for (auto pos = norm.find(keys[i]); pos != std::string::npos; pos = norm.find(keys[i], pos + 1)) {
            hits.push_back({i, pos, pos + keys[i].size()});
        }
    }
    std::vector<bool> counted(keys.size(), false);
    for (const auto& h : hits) {
        const bool shadowed = std::any_of(hits.begin(), hits.end(), [&](const Hit& o) {
            return o.label != h.label && o.begin <= h.begin && h.end <= o.end && (o.end - o.begin) > (h.end - h.begin);
        });
        if (!shadowed) counted[h.label] = true;
    }
    std::optional<std::size_t> match;
    for (std::size_t i = 0; i < counted.size(); ++i) {
        if (!counted[i]) continue;
        if (match) throw ParseFailure(std::string(raw));
        match = i;
    }
    if (!match) throw ParseFailure(std::string(raw));
    return labels[*match];
}

std::string ChatRequest::to_json() const {
    return json{{"model", model}, {"temperature", temperature}, {"messages", messages_json(messages)}}.dump();
}

ChatRequest ChatRequest::from_json(const std::string& body) {
    auto j = json::parse(body);
    ChatRequest r;
    r.model = j.value("model", "");
    r.temperature = j.value("temperature", 0.0);
    for (const auto& m : j.at("messages")) {
        r.messages.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    return r;
}

HttpChatClient::HttpChatClient(HttpChatConfig config) : config_(std::move(config)) {
    if (config_.url.empty()) throw ConfigError("chat client needs an endpoint URL");
    if (config_.model.empty()) throw ConfigError("chat client needs a model name");
}

std::string HttpChatClient::complete(const ChatRequest& request) {
    net::HttpResponse res;
    try {
        res = net::post_json(config_.url, request.to_json(), net::env_or_empty(config_.token_env), config_.timeout);
    } catch (const std::runtime_error& e) {
        throw TransportError(e.what(), 1);
    }
    if (res.status != 200) throw TransportError("chat endpoint returned HTTP " + std::to_string(res.status), 1);
    try {
        auto j = json::parse(res.body);
        if (j.contains("choices")) return j.at("choices").at(0).at("message").at("content").get<std::string>();
        return j.at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed chat response: ") + e.what(), 1);
    }
}

TokenBucket::TokenBucket(double rate, double burst)
    : rate_(rate), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)), last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
    if (rate_ <= 0.0) return;
    std::unique_lock lock(mutex_);
    while (true) {
        const auto now = std::chrono::steady_clock::now();
        tokens_ = std::min(burst_, tokens_ + rate_ * std::chrono::duration<double>(now - last_).count());
        last_ = now;
        if (tokens_ >= 1.0) {
            tokens_ -= 1.0;
            return;
        }
        const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
        lock.unlock();
        std::this_thread::sleep_for(wait);
        lock.lock();
    }
}

LlmResponse complete_with_retry(ChatClient& client, const ChatRequest& request, const LlmCallPolicy& policy) {
    const int max_attempts = std::max(1, policy.retry.max_attempts);
    std::string last_error;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        if (policy.limiter) policy.limiter->acquire();
        const auto start = std::chrono::steady_clock::now();
        try {
            auto text = client.complete(request);
            return LlmResponse{std::move(text), std::nullopt, elapsed_ms(start), attempt};
        } catch (const TransportError& e) {
            last_error = e.what();
        }
        if (attempt < max_attempts) backoff_sleep(policy.retry, attempt, fnv1a64(request.to_json()));
    }
    throw TransportError("chat completion failed after " + std::to_string(max_attempts) + " attempts: " + last_error,
                         max_attempts);
}

std::pair<Prediction, LlmResponse> llm_predict_detailed(ChatClient& client, const PromptSpec& prompt,
                                                        const LlmCallPolicy& policy) {
    ChatRequest request{client.model_name(), 0.0, prompt.messages};
    for (int round = 0; round < 2; ++round) {
        LlmResponse response;
        try {
            response = complete_with_retry(client, request, policy);
        } catch (const TransportError& e) {
            throw QueryFailed(prompt.query_id, e.what());
        }
        try {
            auto label = parse_label(response.raw_text, prompt.label_space);
            response.parsed_label = label;
            return {Prediction{prompt.query_id, std::move(label), model_for(prompt.mode), std::nullopt},
                    std::move(response)};
        } catch (const ParseFailure& e) {
            if (round == 1) throw QueryFailed(prompt.query_id, e.what());
            request.messages.push_back({Role::System, std::string(kAnswerReminder)});
        }
    }
    throw QueryFailed(prompt.query_id, "unreachable");
}

Prediction llm_predict(ChatClient& client, const PromptSpec& prompt, const LlmCallPolicy& policy) {
    return llm_predict_detailed(client, prompt, policy).first;
}

std::string llm_annotator_id(const ChatClient& client) { return "llm:" + client.model_name(); }

std::string relevance_instruction(std::string_view task_description) {
    return "You judge whether an example is relevant to classifying the given input for the task: " +
           std::string(task_description) + ". Answer Yes or No with no explanation.";
}

std::string relevance_user_message(std::string_view query_text, std::string_view example_text) {
    return "Input: " + std::string(query_text) + "\nExample: " + std::string(example_text);
}

std::vector<ChatMessage> build_relevance_prompt(const Example& query, const Neighbor& demo,
                                                std::string_view task_description) {
    return {{Role::System, relevance_instruction(task_description)},
            {Role::User, relevance_user_message(query.text, demo.text)}};
}

std::optional<bool> parse_yes_no(std::string_view raw) {
    const std::string s = lower(trim(raw));
    auto word_is = [&](std::string_view w) {
        return s.starts_with(w) && (s.size() == w.size() || !std::isalnum(static_cast<unsigned char>(s[w.size()])));
    };
    if (word_is("yes")) return true;
    if (word_is("no")) return false;
    return std::nullopt;
}

RelevanceVerdict llm_annotate_relevance(ChatClient& client, const Example& query, const Neighbor& demo,
                                        std::string_view task_description, const LlmCallPolicy& policy) {
    ChatRequest request{client.model_name(), 0.0, build_relevance_prompt(query, demo, task_description)};
    std::string last_raw;
    for (int attempt = 0; attempt < 2; ++attempt) {
        LlmResponse response;
        try {
            response = complete_with_retry(client, request, policy);
        } catch (const TransportError& e) {
            throw AnnotationFailed("relevance of " + demo.example_id + " for " + query.id + ": " + e.what());
        }
        if (auto verdict = parse_yes_no(response.raw_text)) {
            return RelevanceVerdict{query.id, demo.example_id, *verdict, llm_annotator_id(client)};
        }
        last_raw = response.raw_text;
        if (attempt == 0) request.messages.push_back({Role::System, "Answer Yes or No."});
    }
    throw AnnotationFailed("relevance of " + demo.example_id + " for " + query.id + ": unparseable answer '" +
                           last_raw + "'");
}

} // namespace knnicl
