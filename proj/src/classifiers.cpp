#include "knnicl/classifiers.hpp"

#include "knnicl/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

namespace knnicl {

namespace {

constexpr std::pair<ModelKind, std::string_view> kModelNames[] = {
    {ModelKind::Knn, "knn"},
    {ModelKind::WeightedKnn, "wknn"},
    {ModelKind::Lr, "lr"},
    {ModelKind::Llm, "llm"},
    {ModelKind::LlmWeighted, "llm_weighted"},
    {ModelKind::LlmZeroShot, "llm_zeroshot"},
    {ModelKind::Router, "router"},
};

bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c); }

std::vector<double> softmax(std::vector<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    return z;
}

std::size_t argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace

std::string_view to_string(ModelKind kind) {
    for (const auto& [k, name] : kModelNames)
        if (k == kind) return name;
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    for (const auto& [k, n] : kModelNames)
        if (n == name) return k;
    throw ConfigError("unknown model '" + std::string(name) + "'");
}

Prediction knn_predict(const NeighborSet& ns, bool weighted) {
    if (ns.neighbors.empty()) throw ContractError("knn_predict: empty neighbor set for query '" + ns.query_id + "'");
    struct Tally {
        double votes = 0.0;
        double similarity = 0.0;
    };
    std::map<std::string, Tally> tally;
    for (const auto& n : ns.neighbors) {
        auto& t = tally[n.label];
        t.votes += 1.0;
        t.similarity += n.similarity;
    }
    // std::map iterates in lexicographic order, so strict comparisons keep the
    // smallest label on a full tie.
    const std::string* best = nullptr;
    const Tally* best_tally = nullptr;
    for (const auto& [label, t] : tally) {
        if (!best) {
            best = &label;
            best_tally = &t;
            continue;
        }
        const double primary = weighted ? t.similarity : t.votes;
        const double best_primary = weighted ? best_tally->similarity : best_tally->votes;
        if (primary > best_primary || (primary == best_primary && t.similarity > best_tally->similarity)) {
            best = &label;
            best_tally = &t;
        }
    }
    std::map<std::string, double> scores;
    for (const auto& [label, t] : tally) scores[label] = weighted ? t.similarity : t.votes;
    return Prediction{ns.query_id, *best, weighted ? ModelKind::WeightedKnn : ModelKind::Knn, std::move(scores)};
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (is_word_byte(c)) {
            cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

TfidfModel tfidf_fit(const std::vector<std::string>& texts, std::vector<std::string> ids) {
    if (texts.empty()) throw ContractError("tfidf_fit: no texts");
    std::map<std::string, std::size_t> df;
    for (const auto& t : texts) {
        auto toks = tokenize(t);
        std::set<std::string> uniq(toks.begin(), toks.end());
        for (const auto& tok : uniq) ++df[tok];
    }
    if (df.empty()) throw ContractError("tfidf_fit: every text is empty after tokenization");
    TfidfModel m;
    m.fitted_on = std::move(ids);
    const double n = static_cast<double>(texts.size());
    std::size_t col = 0;
    for (const auto& [tok, count] : df) {
        m.vocabulary.emplace(tok, col++);
        m.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
    }
    return m;
}

SparseVector tfidf_transform(const TfidfModel& model, std::string_view text) {
    std::map<std::size_t, double> counts;
    for (const auto& tok : tokenize(text)) {
        auto it = model.vocabulary.find(tok);
        if (it != model.vocabulary.end()) counts[it->second] += 1.0;
    }
    SparseVector v;
    double norm = 0.0;
    for (const auto& [col, c] : counts) {
        const double w = c * model.idf[col];
        v.emplace_back(col, w);
        norm += w * w;
    }
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (auto& [col, w] : v) w /= norm;
    }
    return v;
}

std::vector<double> LogRegModel::logits(const SparseVector& x) const {
    std::vector<double> z = bias;
    for (std::size_t c = 0; c < weights.size(); ++c)
        for (const auto& [col, val] : x)
            if (col < dims) z[c] += weights[c][col] * val;
    return z;
}

std::vector<double> LogRegModel::probabilities(const SparseVector& x) const { return softmax(logits(x)); }

Objective logreg_objective(const std::vector<double>& params, std::size_t classes, std::size_t dims,
                           const std::vector<SparseVector>& features, const std::vector<std::size_t>& targets,
                           double l2) {
    const std::size_t bias_at = classes * dims;
    Objective out;
    out.gradient.assign(params.size(), 0.0);
    std::vector<double> z(classes);
    for (std::size_t i = 0; i < features.size(); ++i) {
        for (std::size_t c = 0; c < classes; ++c) {
            double acc = params[bias_at + c];
            for (const auto& [col, val] : features[i]) acc += params[c * dims + col] * val;
            z[c] = acc;
        }
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        const double lse = m + std::log(sum);
        out.loss += lse - z[targets[i]];
        for (std::size_t c = 0; c < classes; ++c) {
            const double residual = std::exp(z[c] - lse) - (c == targets[i] ? 1.0 : 0.0);
            for (const auto& [col, val] : features[i]) out.gradient[c * dims + col] += residual * val;
            out.gradient[bias_at + c] += residual;
        }
    }
    for (std::size_t j = 0; j < bias_at; ++j) {
        out.loss += 0.5 * l2 * params[j] * params[j];
        out.gradient[j] += l2 * params[j];
    }
    return out;
}

LogRegModel logreg_train(const std::vector<SparseVector>& features, const std::vector<std::string>& labels,
                         std::size_t dims, const LogRegHyper& hyper) {
    if (features.size() != labels.size()) throw ContractError("logreg_train: features/labels size mismatch");
    if (labels.empty()) throw ContractError("logreg_train: no training data");
    LogRegModel m;
    std::set<std::string> seen(labels.begin(), labels.end());
    m.classes_seen.assign(seen.begin(), seen.end());
    m.dims = dims;
    const std::size_t classes = m.classes_seen.size();
    m.weights.assign(classes, std::vector<double>(dims, 0.0));
    m.bias.assign(classes, 0.0);
    if (classes == 1) {
        m.converged = true;
        return m;
    }

    std::vector<std::size_t> targets;
    for (const auto& l : labels) {
        targets.push_back(static_cast<std::size_t>(
            std::lower_bound(m.classes_seen.begin(), m.classes_seen.end(), l) - m.classes_seen.begin()));
    }

    std::vector<double> params(classes * dims + classes, 0.0);
    auto current = logreg_objective(params, classes, dims, features, targets, hyper.l2);
    double step = 1.0;
    for (int it = 0; it < hyper.max_iters; ++it) {
        double gmax = 0.0;
        for (double g : current.gradient) gmax = std::max(gmax, std::abs(g));
        if (gmax < hyper.tol) {
            m.converged = true;
            break;
        }
        bool moved = false;
        while (step > 1e-12) {
            std::vector<double> trial(params.size());
            for (std::size_t j = 0; j < params.size(); ++j) trial[j] = params[j] - step * current.gradient[j];
            auto next = logreg_objective(trial, classes, dims, features, targets, hyper.l2);
            if (next.loss < current.loss) {
                params = std::move(trial);
                current = std::move(next);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        m.iterations = it + 1;
        if (!moved) {
            m.converged = true;
            break;
        }
    }

    for (std::size_t c = 0; c < classes; ++c) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(c * dims), dims, m.weights[c].begin());
        m.bias[c] = params[classes * dims + c];
    }
    return m;
}

Prediction lr_on_topk(const NeighborSet& ns, std::string_view query_text, const LogRegHyper& hyper) {
    if (ns.neighbors.empty()) throw ContractError("lr_on_topk: empty neighbor set for query '" + ns.query_id + "'");
    const auto& first = ns.neighbors.front().label;
    const bool unanimous = std::all_of(ns.neighbors.begin(), ns.neighbors.end(),
                                       [&](const Neighbor& n) { return n.label == first; });
    if (ns.neighbors.size() == 1 || unanimous) {
        return Prediction{ns.query_id, first, ModelKind::Lr, std::nullopt};
    }

    std::vector<std::string> texts, ids, labels;
    for (const auto& n : ns.neighbors) {
        texts.push_back(n.text);
        ids.push_back(n.example_id);
        labels.push_back(n.label);
    }
    const auto vectorizer = tfidf_fit(texts, ids);
    std::vector<SparseVector> features;
    for (const auto& t : texts) features.push_back(tfidf_transform(vectorizer, t));
    const auto model = logreg_train(features, labels, vectorizer.dims(), hyper);

    const auto probs = model.probabilities(tfidf_transform(vectorizer, query_text));
    std::map<std::string, double> scores;
    for (std::size_t c = 0; c < probs.size(); ++c) scores[model.classes_seen[c]] = probs[c];
    return Prediction{ns.query_id, model.classes_seen[argmax(probs)], ModelKind::Lr, std::move(scores)};
}

} // namespace knnicl
