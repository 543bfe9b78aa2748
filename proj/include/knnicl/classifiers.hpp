#pragma once

#include "knnicl/corpus.hpp"
#include "knnicl/retrieval.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace knnicl {

enum class ModelKind { Knn, WeightedKnn, Lr, Llm, LlmWeighted, LlmZeroShot, Router };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct Prediction {
    std::string query_id;
    std::string label;
    ModelKind model = ModelKind::Knn;
    /// Vote totals (kNN) or class probabilities (LR), when the model has them.
    std::optional<std::map<std::string, double>> score_by_label;

    bool operator==(const Prediction&) const = default;
};

// ---------------------------------------------------------------- kNN

/// Majority vote (weighted = false) or similarity-weighted vote over the
/// neighbors. Ties go to the label with the highest cumulative similarity,
/// then the lexicographically smallest label.
Prediction knn_predict(const NeighborSet& ns, bool weighted);

// ---------------------------------------------------------------- TF-IDF

/// Lowercased ASCII alphanumeric runs; bytes >= 0x80 count as word
/// characters so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

using SparseVector = std::vector<std::pair<std::size_t, double>>;

struct TfidfModel {
    /// token -> column, dense in 0..V-1, assigned in lexicographic token order
    std::map<std::string, std::size_t> vocabulary;
    std::vector<double> idf;
    std::vector<std::string> fitted_on;

    std::size_t dims() const noexcept { return idf.size(); }
};

/// idf(t) = ln((1 + N) / (1 + df(t))) + 1. Throws if no text has a token.
TfidfModel tfidf_fit(const std::vector<std::string>& texts, std::vector<std::string> ids = {});

/// count(t) * idf(t), L2-normalized; sorted by column. All-OOV text gives an
/// empty (zero) vector.
SparseVector tfidf_transform(const TfidfModel& model, std::string_view text);

// ---------------------------------------------------------------- LR

struct LogRegHyper {
    double l2 = 1.0;
    int max_iters = 500;
    double tol = 1e-6;
};

/// Multinomial logistic regression. Rows of `weights` follow `classes_seen`.
struct LogRegModel {
    std::vector<std::string> classes_seen;
    std::size_t dims = 0;
    std::vector<std::vector<double>> weights;
    std::vector<double> bias;
    int iterations = 0;
    bool converged = false;

    bool degenerate() const noexcept { return classes_seen.size() == 1; }

    std::vector<double> logits(const SparseVector& x) const;
    std::vector<double> probabilities(const SparseVector& x) const;
};

/// Loss and gradient of sum-of-cross-entropy + (l2/2)|W|^2 (bias is not
/// penalized). Parameters are packed class-major: W[c][0..D-1] for each
/// class, then the C biases.
struct Objective {
    double loss = 0.0;
    std::vector<double> gradient;
};

Objective logreg_objective(const std::vector<double>& params, std::size_t classes, std::size_t dims,
                           const std::vector<SparseVector>& features, const std::vector<std::size_t>& targets,
                           double l2);

/// Full-batch gradient descent from zero, halving the step whenever the
/// objective fails to decrease. Stops when |grad|_inf < tol or after
/// max_iters. A single distinct label yields a constant predictor.
LogRegModel logreg_train(const std::vector<SparseVector>& features, const std::vector<std::string>& labels,
                         std::size_t dims, const LogRegHyper& hyper = {});

/// Trains TF-IDF + LR on the neighbors alone and classifies the query text.
/// One neighbor or a unanimous neighborhood short-circuits to that label.
Prediction lr_on_topk(const NeighborSet& ns, std::string_view query_text, const LogRegHyper& hyper = {});

} // namespace knnicl
