#pragma once

#include "knnicl/classifiers.hpp"
#include "knnicl/corpus.hpp"
#include "knnicl/llm.hpp"
#include "knnicl/retrieval.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace knnicl {

/// All predictions one model made in one (dataset, k) cell. Failed queries
/// are listed separately and excluded from every statistic.
struct PredictionSet {
    std::map<std::string, Prediction> by_query;
    std::set<std::string> failed;

    void add(Prediction p) {
        auto id = p.query_id;
        by_query.insert_or_assign(std::move(id), std::move(p));
    }
};

struct AccuracyReport {
    /// Absent when no valid prediction exists.
    std::optional<double> accuracy;
    std::size_t n_valid = 0;
    std::size_t n_correct = 0;
    std::size_t n_excluded = 0;
};

AccuracyReport accuracy(const PredictionSet& preds, const std::map<std::string, std::string>& gold);

struct AccuracyPair {
    std::string dataset;
    std::size_t k = 0;
    std::string model_a;
    std::string model_b;
    std::optional<double> acc_a;
    std::optional<double> acc_b;
};

struct GridCell {
    std::string dataset;
    std::size_t k = 0;
    std::string model_a;
    std::string model_b;
    /// |acc_a - acc_b|; absent marks a hole (a missing accuracy).
    std::optional<double> abs_diff;
};

std::vector<GridCell> accuracy_diff_grid(const std::vector<AccuracyPair>& cells);

/// Rows are model A, columns model B, both in label-space order.
struct ContingencyMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> counts;
    std::size_t n = 0;
    /// Set when the two prediction sets share no valid query.
    bool empty_join = false;

    std::size_t trace() const;
    std::size_t row_sum(std::size_t i) const;
    std::size_t col_sum(std::size_t j) const;
};

/// Tallies predictions over the queries both models answered.
ContingencyMatrix contingency(const PredictionSet& a, const PredictionSet& b, const LabelSpace& labels);

/// Tallies explicit (rater A, rater B) label pairs.
ContingencyMatrix contingency_from_pairs(std::span<const std::pair<std::string, std::string>> pairs,
                                         const LabelSpace& labels);

struct AgreementReport {
    double kappa = 0.0;
    double observed = 0.0;
    double expected = 0.0;
    /// p_e == 1: both raters constant and equal; kappa is reported as 0.
    bool degenerate = false;
    ContingencyMatrix matrix;
};

/// Multi-class Cohen's kappa: (p_o - p_e) / (1 - p_e).
AgreementReport cohen_kappa(const ContingencyMatrix& m);

struct RelevanceScore {
    std::string query_id;
    std::size_t k = 0;
    std::string annotator;
    double score = 0.0;
};

/// Fraction of relevant verdicts among the k neighbors of `ns` for one
/// annotator. Throws listing neighbor ids that lack a verdict.
RelevanceScore relevance_score(const NeighborSet& ns, std::span<const RelevanceVerdict> verdicts,
                               const std::string& annotator);

/// Same, without the neighbor set: requires exactly k verdicts.
RelevanceScore relevance_score(std::span<const RelevanceVerdict> verdicts, std::size_t k);

/// Kappa between two annotators' Boolean verdicts on the pairs both judged.
AgreementReport relevance_agreement(std::span<const RelevanceVerdict> a, std::span<const RelevanceVerdict> b);

using JudgedPair = std::pair<std::string, std::string>; // (query_id, example_id)

/// |human & machine| / |human|; absent when the human set is empty.
std::optional<double> inclusion_score(const std::set<JudgedPair>& human, const std::set<JudgedPair>& machine);

struct CorrelationReport {
    std::size_t n = 0;
    /// Absent when either variable has zero variance.
    std::optional<double> r;
    std::optional<double> r_squared;
};

/// Pearson r with population moments; r_squared = r * r.
CorrelationReport pearson(std::span<const double> x, std::span<const double> y);

struct SameLabelStats {
    std::size_t n = 0;
    std::size_t n_same = 0;
    double pct_all_same_label = 0.0;
    std::optional<double> agree_rate_given_same;
    std::optional<double> agree_rate_given_diff;
};

/// Splits queries by whether all their neighbors share one label and reports
/// the A-vs-B agreement inside each part. Queries missing a prediction from
/// either model are skipped.
SameLabelStats same_label_stats(const std::map<std::string, NeighborSet>& neighbor_sets, const PredictionSet& a,
                                const PredictionSet& b);

} // namespace knnicl
