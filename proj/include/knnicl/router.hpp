#pragma once

#include "knnicl/analysis.hpp"
#include "knnicl/classifiers.hpp"
#include "knnicl/llm.hpp"
#include "knnicl/retrieval.hpp"

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace knnicl {

enum class Route { Knn, Llm };

std::string_view to_string(Route route);

enum class RelevanceSource { LlmAnnotator, Proxy };

std::string_view to_string(RelevanceSource source);

struct RouteDecision {
    std::string query_id;
    double relevance = 0.0;
    double threshold = 0.0;
    Route route = Route::Knn;
    RelevanceSource source = RelevanceSource::Proxy;
    Prediction prediction;
};

/// Linear map from mean neighbor similarity to a [0, 1] relevance estimate.
struct ProxyCalibration {
    double slope = 1.0;
    double intercept = 0.0;

    double apply(double mean_similarity) const;
};

/// Least-squares fit of annotated relevance on mean neighbor similarity.
/// Needs two or more points with distinct similarities.
ProxyCalibration calibrate_proxy(std::span<const double> mean_similarities, std::span<const double> annotated);

double mean_similarity(const NeighborSet& ns);

/// Relevance estimate without any model call.
RelevanceScore proxy_relevance(const NeighborSet& ns, const ProxyCalibration& calibration = {});

/// Append-only JSON-lines log of routing decisions; safe for concurrent use.
class RouteAuditLog {
public:
    RouteAuditLog() = default;
    explicit RouteAuditLog(const std::filesystem::path& path);

    void append(const RouteDecision& decision);
    std::vector<std::string> lines() const;

private:
    mutable std::mutex mutex_;
    std::optional<std::ofstream> out_;
    std::vector<std::string> lines_;
};

struct RouterOptions {
    double threshold = 0.5;
    bool weighted_knn = false;
    LlmCallPolicy llm_policy;
    PromptTemplate prompt_template;
};

/// kNN when rel.score >= threshold, otherwise the LLM with the plain ICL
/// prompt over the same neighbors. An LLM failure propagates as QueryFailed.
RouteDecision route(const Example& query, const NeighborSet& ns, const RelevanceScore& rel, const LabelSpace& labels,
                    ChatClient* llm, const RouterOptions& options = {},
                    RelevanceSource source = RelevanceSource::Proxy, RouteAuditLog* audit = nullptr);

} // namespace knnicl
