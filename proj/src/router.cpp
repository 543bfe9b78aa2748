#include "knnicl/router.hpp"

#include "knnicl/errors.hpp"

#include <json.hpp>

#include <algorithm>

namespace knnicl {

std::string_view to_string(Route route) { return route == Route::Knn ? "knn" : "llm"; }

std::string_view to_string(RelevanceSource source) {
    return source == RelevanceSource::LlmAnnotator ? "llm_annotator" : "proxy";
}

double ProxyCalibration::apply(double mean_similarity) const {
    return std::clamp(slope * mean_similarity + intercept, 0.0, 1.0);
}

ProxyCalibration calibrate_proxy(std::span<const double> mean_similarities, std::span<const double> annotated) {
    if (mean_similarities.size() != annotated.size() || mean_similarities.size() < 2) {
        throw ContractError("calibrate_proxy: need two or more paired points");
    }
    const double n = static_cast<double>(annotated.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < annotated.size(); ++i) {
        mx += mean_similarities[i];
        my += annotated[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < annotated.size(); ++i) {
        sxx += (mean_similarities[i] - mx) * (mean_similarities[i] - mx);
        sxy += (mean_similarities[i] - mx) * (annotated[i] - my);
    }
    if (sxx == 0.0) throw ContractError("calibrate_proxy: similarities have zero variance");
    const double slope = sxy / sxx;
    return ProxyCalibration{slope, my - slope * mx};
}

double mean_similarity(const NeighborSet& ns) {
    if (ns.neighbors.empty()) throw ContractError("mean_similarity: empty neighbor set");
    double s = 0.0;
    for (const auto& n : ns.neighbors) s += n.similarity;
    return s / static_cast<double>(ns.neighbors.size());
}

RelevanceScore proxy_relevance(const NeighborSet& ns, const ProxyCalibration& calibration) {
    return RelevanceScore{ns.query_id, ns.k, "proxy:mean_similarity", calibration.apply(mean_similarity(ns))};
}

RouteAuditLog::RouteAuditLog(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.emplace(path, std::ios::app);
    if (!*out_) throw std::runtime_error("cannot open audit log " + path.string());
}

void RouteAuditLog::append(const RouteDecision& d) {
    const std::string line = nlohmann::json{{"query_id", d.query_id},
                                            {"relevance", d.relevance},
                                            {"threshold", d.threshold},
                                            {"source", to_string(d.source)},
                                            {"route", to_string(d.route)},
                                            {"label", d.prediction.label},
                                            {"model", to_string(d.prediction.model)}}
                                 .dump();
    std::lock_guard lock(mutex_);
    lines_.push_back(line);
    if (out_) *out_ << line << '\n' << std::flush;
}

std::vector<std::string> RouteAuditLog::lines() const {
    std::lock_guard lock(mutex_);
    return lines_;
}

RouteDecision route(const Example& query, const NeighborSet& ns, const RelevanceScore& rel, const LabelSpace& labels,
                    ChatClient* llm, const RouterOptions& options, RelevanceSource source, RouteAuditLog* audit) {
    if (rel.query_id != ns.query_id) {
        throw ContractError("route: relevance is for query '" + rel.query_id + "', neighbors for '" + ns.query_id + "'");
    }
    if (rel.k != ns.k) throw ContractError("route: relevance k and neighbor-set k differ");

    RouteDecision d;
    d.query_id = ns.query_id;
    d.relevance = rel.score;
    d.threshold = options.threshold;
    d.source = source;
    if (rel.score >= options.threshold) {
        d.route = Route::Knn;
        d.prediction = knn_predict(ns, options.weighted_knn);
    } else {
        if (!llm) throw ContractError("route: relevance below threshold and no LLM client configured");
        d.route = Route::Llm;
        d.prediction = llm_predict(*llm, build_icl_prompt(ns, query, labels, PromptMode::Plain, options.prompt_template),
                                   options.llm_policy);
    }
    if (audit) audit->append(d);
    return d;
}

} // namespace knnicl
