#include "knnicl/analysis.hpp"

#include "knnicl/errors.hpp"

#include <algorithm>
#include <cmath>

namespace knnicl {

namespace {

std::size_t label_index(const LabelSpace& labels, const std::string& label) {
    auto i = labels.index_of(label);
    if (!i) throw ContractError("label '" + label + "' is outside the label space");
    return *i;
}

ContingencyMatrix empty_matrix(const LabelSpace& labels) {
    ContingencyMatrix m;
    m.labels = labels.labels();
    m.counts.assign(labels.size(), std::vector<std::size_t>(labels.size(), 0));
    return m;
}

} // namespace

AccuracyReport accuracy(const PredictionSet& preds, const std::map<std::string, std::string>& gold) {
    AccuracyReport r;
    for (const auto& [qid, p] : preds.by_query) {
        auto g = gold.find(qid);
        if (g == gold.end()) throw ContractError("prediction for unknown query '" + qid + "'");
        if (preds.failed.contains(qid)) continue;
        ++r.n_valid;
        if (p.label == g->second) ++r.n_correct;
    }
    for (const auto& qid : preds.failed) {
        if (!gold.contains(qid)) throw ContractError("failure flag for unknown query '" + qid + "'");
    }
    r.n_excluded = preds.failed.size();
    if (r.n_valid > 0) r.accuracy = static_cast<double>(r.n_correct) / static_cast<double>(r.n_valid);
    return r;
}

std::vector<GridCell> accuracy_diff_grid(const std::vector<AccuracyPair>& cells) {
    std::vector<GridCell> out;
    out.reserve(cells.size());
    for (const auto& c : cells) {
        GridCell g{c.dataset, c.k, c.model_a, c.model_b, std::nullopt};
        if (c.acc_a && c.acc_b) g.abs_diff = std::abs(*c.acc_a - *c.acc_b);
        out.push_back(std::move(g));
    }
    return out;
}

std::size_t ContingencyMatrix::trace() const {
    std::size_t t = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
}

std::size_t ContingencyMatrix::row_sum(std::size_t i) const {
    std::size_t s = 0;
    for (auto c : counts[i]) s += c;
    return s;
}

std::size_t ContingencyMatrix::col_sum(std::size_t j) const {
    std::size_t s = 0;
    for (const auto& row : counts) s += row[j];
    return s;
}

ContingencyMatrix contingency(const PredictionSet& a, const PredictionSet& b, const LabelSpace& labels) {
    auto m = empty_matrix(labels);
    for (const auto& [qid, pa] : a.by_query) {
        if (a.failed.contains(qid) || b.failed.contains(qid)) continue;
        auto it = b.by_query.find(qid);
        if (it == b.by_query.end()) continue;
        ++m.counts[label_index(labels, pa.label)][label_index(labels, it->second.label)];
        ++m.n;
    }
    m.empty_join = m.n == 0;
    return m;
}

ContingencyMatrix contingency_from_pairs(std::span<const std::pair<std::string, std::string>> pairs,
                                         const LabelSpace& labels) {
    auto m = empty_matrix(labels);
    for (const auto& [x, y] : pairs) {
        ++m.counts[label_index(labels, x)][label_index(labels, y)];
        ++m.n;
    }
    m.empty_join = m.n == 0;
    return m;
}

AgreementReport cohen_kappa(const ContingencyMatrix& m) {
    if (m.n == 0) throw ContractError("cohen_kappa: empty contingency matrix");
    AgreementReport r;
    r.matrix = m;
    const double n = static_cast<double>(m.n);
    r.observed = static_cast<double>(m.trace()) / n;
    double pe = 0.0;
    for (std::size_t i = 0; i < m.counts.size(); ++i) {
        pe += (static_cast<double>(m.row_sum(i)) / n) * (static_cast<double>(m.col_sum(i)) / n);
    }
    r.expected = pe;
    if (pe >= 1.0) {
        r.degenerate = true;
        r.kappa = 0.0;
    } else {
        r.kappa = (r.observed - pe) / (1.0 - pe);
    }
    return r;
}

RelevanceScore relevance_score(const NeighborSet& ns, std::span<const RelevanceVerdict> verdicts,
                               const std::string& annotator) {
    std::map<std::string, bool> by_example;
    for (const auto& v : verdicts) {
        if (v.query_id == ns.query_id && v.annotator_id == annotator) by_example[v.example_id] = v.relevant;
    }
    std::vector<std::string> missing;
    std::size_t relevant = 0;
    for (const auto& n : ns.neighbors) {
        auto it = by_example.find(n.example_id);
        if (it == by_example.end()) missing.push_back(n.example_id);
        else if (it->second) ++relevant;
    }
    if (!missing.empty()) {
        std::string msg = "relevance_score for query '" + ns.query_id + "' (" + annotator + ") lacks verdicts for:";
        for (const auto& id : missing) msg += " " + id;
        throw ContractError(msg);
    }
    const auto judged = ns.neighbors.size();
    if (judged == 0) throw ContractError("relevance_score: empty neighbor set");
    return RelevanceScore{ns.query_id, ns.k, annotator, static_cast<double>(relevant) / static_cast<double>(judged)};
}

RelevanceScore relevance_score(std::span<const RelevanceVerdict> verdicts, std::size_t k) {
    if (k == 0) throw ContractError("relevance_score: k must be positive");
    if (verdicts.size() != k) {
        throw ContractError("relevance_score: expected " + std::to_string(k) + " verdicts, got " +
                            std::to_string(verdicts.size()));
    }
    std::set<std::string> examples;
    std::size_t relevant = 0;
    for (const auto& v : verdicts) {
        if (v.query_id != verdicts.front().query_id || v.annotator_id != verdicts.front().annotator_id) {
            throw ContractError("relevance_score: verdicts span several queries or annotators");
        }
        if (!examples.insert(v.example_id).second) {
            throw ContractError("relevance_score: duplicate verdict for example '" + v.example_id + "'");
        }
        if (v.relevant) ++relevant;
    }
    return RelevanceScore{verdicts.front().query_id, k, verdicts.front().annotator_id,
                          static_cast<double>(relevant) / static_cast<double>(k)};
}

AgreementReport relevance_agreement(std::span<const RelevanceVerdict> a, std::span<const RelevanceVerdict> b) {
    static const LabelSpace kBool({"irrelevant", "relevant"});
    std::map<JudgedPair, bool> second;
    for (const auto& v : b) second[{v.query_id, v.example_id}] = v.relevant;
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& v : a) {
        auto it = second.find({v.query_id, v.example_id});
        if (it == second.end()) continue;
        pairs.emplace_back(kBool[v.relevant ? 1 : 0], kBool[it->second ? 1 : 0]);
    }
    return cohen_kappa(contingency_from_pairs(pairs, kBool));
}

std::optional<double> inclusion_score(const std::set<JudgedPair>& human, const std::set<JudgedPair>& machine) {
    if (human.empty()) return std::nullopt;
    std::size_t inter = 0;
    for (const auto& p : human) inter += machine.count(p);
    return static_cast<double>(inter) / static_cast<double>(human.size());
}

CorrelationReport pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ContractError("pearson: length mismatch");
    if (x.size() < 2) throw ContractError("pearson: need at least 2 points");
    CorrelationReport r;
    r.n = x.size();
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return r;
    // cov / (sd_x sd_y) with population moments; the 1/n factors cancel.
    const double cov = sxy / n;
    const double value = std::clamp(cov / (std::sqrt(sxx / n) * std::sqrt(syy / n)), -1.0, 1.0);
    r.r = value;
    r.r_squared = value * value;
    return r;
}

SameLabelStats same_label_stats(const std::map<std::string, NeighborSet>& neighbor_sets, const PredictionSet& a,
                                const PredictionSet& b) {
    SameLabelStats s;
    std::size_t agree_same = 0, n_diff = 0, agree_diff = 0;
    for (const auto& [qid, ns] : neighbor_sets) {
        if (ns.neighbors.empty()) continue;
        if (a.failed.contains(qid) || b.failed.contains(qid)) continue;
        auto pa = a.by_query.find(qid);
        auto pb = b.by_query.find(qid);
        if (pa == a.by_query.end() || pb == b.by_query.end()) continue;
        ++s.n;
        const auto& first = ns.neighbors.front().label;
        const bool same = std::all_of(ns.neighbors.begin(), ns.neighbors.end(),
                                      [&](const Neighbor& n) { return n.label == first; });
        const bool agree = pa->second.label == pb->second.label;
        if (same) {
            ++s.n_same;
            agree_same += agree;
        } else {
            ++n_diff;
            agree_diff += agree;
        }
    }
    if (s.n > 0) s.pct_all_same_label = 100.0 * static_cast<double>(s.n_same) / static_cast<double>(s.n);
    if (s.n_same > 0) s.agree_rate_given_same = static_cast<double>(agree_same) / static_cast<double>(s.n_same);
    if (n_diff > 0) s.agree_rate_given_diff = static_cast<double>(agree_diff) / static_cast<double>(n_diff);
    return s;
}

} // namespace knnicl
