#include "oracles.hpp"

#include "knnicl/classifiers.hpp"
#include "knnicl/errors.hpp"

#include <doctest.h>

#include <cmath>

using namespace knnicl;

namespace {

NeighborSet make_ns(std::vector<std::pair<std::string, double>> label_sims) {
    NeighborSet ns{"q", label_sims.size(), {}};
    for (std::size_t i = 0; i < label_sims.size(); ++i) {
        ns.neighbors.push_back({"n" + std::to_string(i), label_sims[i].second, label_sims[i].first, "t"});
    }
    return ns;
}

} // namespace

TEST_SUITE("classifiers") {

TEST_CASE("model names round trip") {
    for (auto m : {ModelKind::Knn, ModelKind::WeightedKnn, ModelKind::Lr, ModelKind::Llm, ModelKind::LlmWeighted,
                   ModelKind::LlmZeroShot, ModelKind::Router}) {
        CHECK(parse_model_kind(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_model_kind("svm"), ConfigError);
}

TEST_CASE("majority and weighted votes") {
    const auto ns = make_ns({{"A", 0.9}, {"B", 0.8}, {"B", 0.7}});
    const auto plain = knn_predict(ns, false);
    CHECK(plain.label == "B");
    CHECK(plain.model == ModelKind::Knn);
    CHECK(plain.score_by_label->at("A") == 1.0);
    CHECK(plain.score_by_label->at("B") == 2.0);
    const auto w = knn_predict(make_ns({{"A", 0.95}, {"B", 0.3}, {"B", 0.3}}), true);
    CHECK(w.label == "A");
    CHECK(w.model == ModelKind::WeightedKnn);
    CHECK(w.score_by_label->at("B") == doctest::Approx(0.6));
}

TEST_CASE("vote ties go to cumulative similarity, then the smaller label") {
    CHECK(knn_predict(make_ns({{"B", 0.9}, {"A", 0.5}}), false).label == "B");
    CHECK(knn_predict(make_ns({{"A", 0.9}, {"B", 0.5}}), false).label == "A");
    CHECK(knn_predict(make_ns({{"B", 0.5}, {"A", 0.5}}), false).label == "A");
    CHECK(knn_predict(make_ns({{"C", 0.5}, {"B", 0.5}}), true).label == "B");
    CHECK_THROWS_AS(knn_predict(NeighborSet{"q", 1, {}}, false), ContractError);
}

TEST_CASE("kNN invariants on random neighbor sets") {
    std::mt19937_64 rng(5);
    const std::vector<std::string> labels = {"a", "b", "c", "d"};
    for (int t = 0; t < 300; ++t) {
        auto ns = oracle::random_neighbors(rng, 1 + rng() % 30, labels);

        auto uni = ns;
        for (auto& n : uni.neighbors) n.label = "c";
        CHECK(knn_predict(uni, false).label == "c");
        CHECK(knn_predict(uni, true).label == "c");

        auto flat = ns;
        for (auto& n : flat.neighbors) n.similarity = 0.42;
        CHECK(knn_predict(flat, false).label == knn_predict(flat, true).label);

        auto scaled = ns;
        const double c = std::uniform_real_distribution<double>(0.05, 20.0)(rng);
        for (auto& n : scaled.neighbors) n.similarity *= c;
        CHECK(knn_predict(scaled, true).label == knn_predict(ns, true).label);

        // the predicted label attains the maximum score
        const auto p = knn_predict(ns, t % 2 == 0);
        double best = 0.0;
        for (const auto& [l, s] : *p.score_by_label) best = std::max(best, s);
        CHECK(p.score_by_label->at(p.label) == best);
    }
}

TEST_CASE("tokenizer lowercases ASCII and keeps UTF-8 words whole") {
    CHECK(tokenize("Hello, World! x2") == std::vector<std::string>{"hello", "world", "x2"});
    CHECK(tokenize("Caf\xc3\xa9 ok") == std::vector<std::string>{"caf\xc3\xa9", "ok"});
    CHECK(tokenize("  ...  ").empty());
}

TEST_CASE("tf-idf weights by hand") {
    // N = 3; df(a) = 2, df(b) = 1, df(c) = 1
    const auto m = tfidf_fit({"a b", "a", "c"});
    REQUIRE(m.dims() == 3);
    CHECK(m.vocabulary.at("a") == 0);
    CHECK(m.vocabulary.at("b") == 1);
    CHECK(m.idf[0] == doctest::Approx(std::log(4.0 / 3.0) + 1.0));
    CHECK(m.idf[1] == doctest::Approx(std::log(2.0) + 1.0));
    const auto v = tfidf_transform(m, "a b b");
    REQUIRE(v.size() == 2);
    const double wa = m.idf[0], wb = 2.0 * m.idf[1], n = std::hypot(wa, wb);
    CHECK(v[0].second == doctest::Approx(wa / n));
    CHECK(v[1].second == doctest::Approx(wb / n));
    CHECK(tfidf_transform(m, "zzz").empty());
}

TEST_CASE("tf-idf idf for a token in half of four texts") {
    const auto m = tfidf_fit({"a b", "a b", "a", "a"});
    CHECK(m.idf[m.vocabulary.at("b")] == doctest::Approx(std::log(5.0 / 3.0) + 1.0));
    const auto m2 = tfidf_fit({"a b", "a"});
    CHECK(m2.idf[m2.vocabulary.at("b")] == doctest::Approx(1.405465).epsilon(1e-6));
    CHECK_THROWS_AS(tfidf_fit({"...", "!!"}), ContractError);
}

TEST_CASE("LR objective matches an independent evaluation") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    const std::size_t C = 3, D = 4;
    std::vector<SparseVector> X;
    std::vector<std::vector<double>> dense;
    std::vector<std::size_t> y;
    for (int r = 0; r < 7; ++r) {
        SparseVector s;
        std::vector<double> d(D, 0.0);
        for (std::size_t j = 0; j < D; ++j) {
            if (rng() % 3 == 0) continue;
            d[j] = g(rng);
            s.emplace_back(j, d[j]);
        }
        X.push_back(s);
        dense.push_back(d);
        y.push_back(rng() % C);
    }
    std::vector<double> params(C * D + C);
    for (auto& p : params) p = g(rng);
    const auto obj = logreg_objective(params, C, D, X, y, 0.7);
    CHECK(obj.loss == doctest::Approx(oracle::lr_loss(params, C, D, dense, y, 0.7)).epsilon(1e-12));
    // bias is not regularized: shifting every bias leaves the loss unchanged
    auto shifted = params;
    for (std::size_t c = 0; c < C; ++c) shifted[C * D + c] += 3.0;
    CHECK(logreg_objective(shifted, C, D, X, y, 0.7).loss == doctest::Approx(obj.loss).epsilon(1e-10));
}

TEST_CASE("LR gradient agrees with central differences") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    for (int t = 0; t < 10; ++t) {
        const std::size_t C = 2 + rng() % 3, D = 1 + rng() % 6, N = 2 + rng() % 8;
        std::vector<SparseVector> X(N);
        std::vector<std::size_t> y(N);
        for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t j = 0; j < D; ++j) X[r].emplace_back(j, g(rng));
            y[r] = rng() % C;
        }
        std::vector<double> p(C * D + C);
        for (auto& v : p) v = 0.5 * g(rng);
        const auto obj = logreg_objective(p, C, D, X, y, 0.3);
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto hi = p, lo = p;
            hi[i] += 1e-5;
            lo[i] -= 1e-5;
            const double fd = (logreg_objective(hi, C, D, X, y, 0.3).loss - logreg_objective(lo, C, D, X, y, 0.3).loss) / 2e-5;
            CHECK(std::abs(fd - obj.gradient[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("LR separates a separable problem and handles one class") {
    std::vector<SparseVector> X = {{{0, 1.0}}, {{0, 0.9}}, {{1, 1.0}}, {{1, 0.8}}};
    std::vector<std::string> y = {"pos", "pos", "neg", "neg"};
    const auto m = logreg_train(X, y, 2, {0.1, 500, 1e-8});
    CHECK(m.classes_seen == std::vector<std::string>{"neg", "pos"});
    const auto p = m.probabilities({{0, 1.0}});
    CHECK(p[1] > 0.8);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(sum == doctest::Approx(1.0));

    const auto one = logreg_train({{{0, 1.0}}, {{0, 2.0}}}, {"x", "x"}, 1);
    CHECK(one.degenerate());
    CHECK(one.probabilities({{0, 5.0}}) == std::vector<double>{1.0});
}

TEST_CASE("LR on the neighbors short-circuits unanimous and single neighborhoods") {
    auto ns = make_ns({{"A", 0.9}});
    ns.neighbors[0].text = "alpha";
    CHECK(lr_on_topk(ns, "anything").label == "A");
    auto uni = make_ns({{"B", 0.9}, {"B", 0.8}});
    CHECK(lr_on_topk(uni, "x").label == "B");
    CHECK_FALSE(lr_on_topk(uni, "x").score_by_label.has_value());
}

TEST_CASE("LR on the neighbors follows lexical evidence") {
    NeighborSet ns{"q", 4, {{"a", 0.9, "Sports", "goal match striker"},
                            {"b", 0.8, "World", "summit treaty minister"},
                            {"c", 0.7, "Sports", "match referee goal"},
                            {"d", 0.6, "World", "minister election summit"}}};
    const auto p = lr_on_topk(ns, "the striker scored a goal");
    CHECK(p.label == "Sports");
    CHECK(p.model == ModelKind::Lr);
    REQUIRE(p.score_by_label);
    CHECK(p.score_by_label->at("Sports") > 0.5);
    CHECK(lr_on_topk(ns, "treaty summit").label == "World");
}

}
