// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).

#include "oracles.hpp"
#include "support.hpp"

#include "knnicl/analysis.hpp"
#include "knnicl/annotation.hpp"
#include "knnicl/classifiers.hpp"
#include "knnicl/errors.hpp"
#include "knnicl/harness.hpp"
#include "knnicl/retrieval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

using namespace knnicl;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// ------------------------------------------------------------------ 1

Outcome published_r_squared() {
    // (r, R^2) as printed, human and LLM annotators at k = 1, 10, 20, then
    // the second annotation study
    const double pairs[][2] = {{0.559, 0.313}, {0.728, 0.530}, {0.795, 0.631}, {0.528, 0.279}, {0.668, 0.446},
                               {0.768, 0.589}, {0.674, 0.455}, {0.676, 0.457}, {0.691, 0.477}};
    // the per-dataset (relevance, kappa) rows the r values were computed from
    const std::vector<std::vector<double>> kappa = {
        {0.87, 0.87, 0.06, 0.19, 0.31, 0.12}, {0.87, 0.87, 0.03, 0.39, 0.49, 0.3}, {0.87, 0.84, 0.02, 0.54, 0.57, 0.34},
        {0.87, 0.87, 0.06, 0.19, 0.31, 0.12}, {0.87, 0.87, 0.03, 0.39, 0.49, 0.3}, {0.87, 0.84, 0.02, 0.54, 0.57, 0.34},
        {0.82, 0.67, 0.16, 0.3, 0.37, 0.17},  {0.87, 0.67, 0.09, 0.33, 0.44, 0.3}, {0.86, 0.69, -0.02, 0.28, 0.46, 0.32}};
    const std::vector<std::vector<double>> rel = {
        {0.9, 0.8, 0.5, 0.96, 0.7, 0.2},          {0.794, 0.664, 0.312, 0.756, 0.596, 0.21},
        {0.7, 0.553, 0.267, 0.627, 0.471, 0.154}, {1, 0.88, 0.66, 0.98, 0.98, 0.38},
        {0.976, 0.834, 0.546, 0.966, 0.97, 0.57}, {0.952, 0.795, 0.507, 0.956, 0.961, 0.581},
        {0.974, 0.924, 0.608, 0.868, 0.944, 0.863}, {0.934, 0.839, 0.511, 0.866, 0.929, 0.868},
        {0.917, 0.792, 0.468, 0.861, 0.911, 0.87}};
    double worst_printed = 0.0, worst_recomputed = 0.0, worst_r = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
        const double r = pairs[i][0], R2 = pairs[i][1];
        worst_printed = std::max(worst_printed, std::abs(r * r - R2));
        const auto c = pearson(rel[i], kappa[i]);
        if (!c.r_squared) return {false, "zero-variance row " + std::to_string(i)};
        worst_recomputed = std::max(worst_recomputed, std::abs(*c.r_squared - R2));
        worst_r = std::max(worst_r, std::abs(*c.r - r));
    }
    const bool ok = worst_printed <= 0.005 && worst_recomputed <= 0.005;
    return {ok, fmt("9 pairs; max |r^2 - R^2| = %.4f printed r, %.4f recomputed r; max |r - r_printed| = %.4f",
                    worst_printed, worst_recomputed, worst_r)};
}

// ------------------------------------------------------------------ 2

Outcome kappa_oracle() {
    double worst = 0.0;
    std::size_t checked = 0;
    auto check = [&](const std::vector<std::vector<std::size_t>>& counts) {
        ContingencyMatrix m;
        m.counts = counts;
        for (std::size_t i = 0; i < counts.size(); ++i) m.labels.push_back("l" + std::to_string(i));
        for (const auto& row : counts)
            for (auto c : row) m.n += c;
        worst = std::max(worst, std::abs(cohen_kappa(m).kappa - oracle::kappa(counts)));
        ++checked;
    };
    std::size_t exhaustive = 0;
    for (std::size_t n = 1; n <= 8; ++n)
        for (std::size_t a = 0; a <= n; ++a)
            for (std::size_t b = 0; a + b <= n; ++b)
                for (std::size_t c = 0; a + b + c <= n; ++c) {
                    check({{a, b}, {c, n - a - b - c}});
                    ++exhaustive;
                }
    std::mt19937_64 rng(20240601);
    for (int t = 0; t < 1000; ++t) {
        std::vector<std::vector<std::size_t>> m(4, std::vector<std::size_t>(4, 0));
        const std::size_t n = 1 + rng() % 500;
        // skewed draws so near-degenerate marginals show up too
        const std::size_t bias = rng() % 4;
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t i = rng() % 3 == 0 ? bias : rng() % 4;
            const std::size_t j = rng() % 2 == 0 ? i : rng() % 4;
            ++m[i][j];
        }
        check(m);
    }
    return {worst <= 1e-12,
            fmt("%.0f exhaustive 2-label + %.0f random 4-label matrices; max |diff| = %.2e", double(exhaustive),
                double(checked - exhaustive), worst)};
}

// ------------------------------------------------------------------ 3

Outcome retrieval_oracle() {
    std::mt19937_64 rng(77);
    std::size_t mismatches = 0, comparisons = 0, largest = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = inst < 20 ? 1000 : 1 + rng() % 1000;
        largest = std::max(largest, n);
        auto c = oracle::random_corpus(rng, n, 2 + rng() % 31);
        const auto index = Index::build(c.cache, c.dataset);
        EmbeddingVector q = c.vectors[rng() % n];
        if (inst % 2) {
            for (auto& x : q.values) x += float(int(rng() % 3) - 1);
            if (std::all_of(q.values.begin(), q.values.end(), [](float x) { return x == 0.0f; })) q.values[0] = 1.0f;
        }
        for (std::size_t k : {1, 10, 20, 30}) {
            const auto expect = oracle::exhaustive_topk(c, q, k);
            for (const auto& got : {topk(index, q, k), topk_serial(index, q, k)}) {
                ++comparisons;
                bool same = got.neighbors.size() == expect.size();
                for (std::size_t i = 0; same && i < expect.size(); ++i) {
                    same = got.neighbors[i].example_id == expect[i].first &&
                           got.neighbors[i].similarity == expect[i].second;
                }
                if (!same) ++mismatches;
            }
        }
    }
    return {mismatches == 0, fmt("200 instances (largest %.0f vectors), %.0f comparisons, %.0f mismatches", double(largest),
                                 double(comparisons), double(mismatches))};
}

// ------------------------------------------------------------------ 4

Outcome lr_gradient() {
    std::mt19937_64 rng(4242);
    std::normal_distribution<double> g;
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t D = 1 + rng() % 6, C = 2 + rng() % 3, N = 1 + rng() % 12;
        const double l2 = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
        std::vector<SparseVector> X(N);
        std::vector<std::size_t> y(N);
        for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t d = 0; d < D; ++d)
                if (rng() % 4) X[r].emplace_back(d, g(rng));
            y[r] = rng() % C;
        }
        std::vector<double> p(C * D + C);
        for (auto& v : p) v = g(rng);
        const auto analytic = logreg_objective(p, C, D, X, y, l2).gradient;
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double h = 1e-5 * std::max(1.0, std::abs(p[i]));
            auto hi = p, lo = p;
            hi[i] += h;
            lo[i] -= h;
            const double fd =
                (logreg_objective(hi, C, D, X, y, l2).loss - logreg_objective(lo, C, D, X, y, l2).loss) / (2.0 * h);
            diff += (fd - analytic[i]) * (fd - analytic[i]);
            scale = std::max(scale, std::max(std::abs(fd), std::abs(analytic[i])));
        }
        // |g_fd - g|_2 relative to the largest gradient entry
        worst = std::max(worst, std::sqrt(diff) / std::max(scale, 1e-12));
    }
    return {worst <= 1e-5, fmt("50 instances (<= 6 features, <= 4 classes); max relative error = %.2e", worst)};
}

// ------------------------------------------------------------------ 5

Outcome knn_invariants() {
    std::mt19937_64 rng(99);
    const std::vector<std::string> labels = {"a", "b", "c", "d", "e"};
    std::size_t unanimity = 0, equal_sim = 0, scale = 0;
    for (int t = 0; t < 1000; ++t) {
        auto ns = oracle::random_neighbors(rng, 1 + rng() % 30, labels);
        const auto& only = labels[rng() % labels.size()];
        for (auto& n : ns.neighbors) n.label = only;
        if (knn_predict(ns, false).label == only && knn_predict(ns, true).label == only) ++unanimity;
    }
    for (int t = 0; t < 1000; ++t) {
        auto ns = oracle::random_neighbors(rng, 1 + rng() % 30, labels);
        const double s = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
        for (auto& n : ns.neighbors) n.similarity = s;
        if (knn_predict(ns, false).label == knn_predict(ns, true).label) ++equal_sim;
    }
    for (int t = 0; t < 1000; ++t) {
        auto ns = oracle::random_neighbors(rng, 1 + rng() % 30, labels);
        auto scaled = ns;
        const double c = std::exp(std::uniform_real_distribution<double>(-5.0, 5.0)(rng));
        for (auto& n : scaled.neighbors) n.similarity *= c;
        if (knn_predict(ns, true).label == knn_predict(scaled, true).label) ++scale;
    }
    return {unanimity == 1000 && equal_sim == 1000 && scale == 1000,
            fmt("unanimity %.0f/1000, equal-similarity agreement %.0f/1000, scale invariance %.0f/1000",
                double(unanimity), double(equal_sim), double(scale))};
}

// ------------------------------------------------------------------ 6

Outcome pipeline_anchor() {
    testing::TempDir dir;
    json j = {{"datasets",
               {{{"name", "anchor"},
                 {"synthetic",
                  {{"labels", {"Alpha", "Beta", "Delta", "Gamma"}}, {"n_train", 2000}, {"n_test", 200}, {"seed", 1}}}}}},
              {"sample", {{"n", 200}, {"seed", 0}}},
              {"k_values", {1, 10, 20, 30}},
              {"models", {"knn", "llm"}},
              {"embedding", {{"provider", "mock"}, {"dims", 64}}},
              {"llm", {{"provider", "mock"}, {"script", "majority_echo"}}},
              {"output_dir", (dir / "run").string()}};
    const auto config = parse_config(j);
    RunOptions quiet;
    quiet.write_reports = false;
    const auto s = run_experiment(config, quiet);
    if (!s.complete || !s.failures.empty()) return {false, "run incomplete or with failures"};

    const auto data = load_run(dir / "run");
    const auto labels = data.labels("anchor");
    bool ok = true;
    std::string detail;
    for (std::size_t k : config.k_values) {
        const CellKey cell{"anchor", k};
        const auto knn = data.predictions(cell, ModelKind::Knn), llm = data.predictions(cell, ModelKind::Llm);
        PredictionSet strict_knn, strict_llm;
        for (const auto& [qid, ns] : data.neighbor_sets(cell)) {
            std::map<std::string, std::size_t> counts;
            for (const auto& n : ns.neighbors) ++counts[n.label];
            bool strict = false;
            for (const auto& [l, c] : counts) strict = strict || 2 * c > ns.neighbors.size();
            if (!strict) continue;
            strict_knn.add(knn.by_query.at(qid));
            strict_llm.add(llm.by_query.at(qid));
        }
        const auto m = contingency(strict_knn, strict_llm, labels);
        const auto kappa = cohen_kappa(m).kappa;
        const auto gold = data.gold(cell);
        const double acc_knn = *accuracy(knn, gold).accuracy, acc_llm = *accuracy(llm, gold).accuracy;
        const bool cell_ok = kappa == 1.0 && acc_knn == acc_llm;
        ok = ok && cell_ok;
        char buf[200];
        std::snprintf(buf, sizeof buf, "%sk=%zu: kappa %.4f on %zu strict-majority queries, acc knn %.3f llm %.3f%s",
                      detail.empty() ? "" : "; ", k, kappa, m.n, acc_knn, acc_llm, cell_ok ? "" : " <- mismatch");
        detail += buf;
    }
    return {ok, detail};
}

// ------------------------------------------------------------------ 7

Outcome relevance_correlation() {
    testing::TempDir dir;
    json datasets = json::array();
    for (int i = 0; i < 12; ++i) {
        datasets.push_back({{"name", "plant" + std::to_string(i)},
                            {"synthetic",
                             {{"labels", {"Alpha", "Beta", "Delta", "Gamma"}},
                              {"n_train", 1000},
                              {"n_test", 100},
                              {"purity", 0.25 + 0.06 * i},
                              {"seed", 100 + i}}}});
    }
    json j = {{"datasets", datasets},
              {"sample", {{"n", 100}, {"seed", 0}}},
              {"k_values", {10}},
              {"models", {"knn", "llm"}},
              {"relevance", {{"annotators", {"llm"}}}},
              {"embedding", {{"provider", "mock"}, {"dims", 64}}},
              {"llm", {{"provider", "mock"}, {"script", "relevance_following"}, {"overlap_threshold", 0.2}}},
              {"output_dir", (dir / "run").string()}};
    RunOptions quiet;
    quiet.write_reports = false;
    const auto s = run_experiment(parse_config(j), quiet);
    if (!s.complete) return {false, "run incomplete"};
    const auto table = build_report(load_run(dir / "run"), "correlation");
    for (const auto& row : table.rows) {
        if (row[2] == "knn" && row[3] == "llm") {
            if (row[5].is_null()) return {false, "correlation undefined"};
            const double r = row[5].get<double>();
            return {r >= 0.5, fmt("Pearson r(relevance, kappa(knn, llm)) over %.0f datasets = %.3f (R^2 %.3f)",
                                  row[4].get<double>(), r, row[6].get<double>())};
        }
    }
    return {false, "no knn/llm correlation row"};
}

// ------------------------------------------------------------------ 8

Outcome router_boundaries() {
    std::string detail;
    bool ok = true;
    for (double threshold : {0.0, 1.5}) {
        testing::TempDir dir;
        auto j = testing::synthetic_config(dir / "run", 300, 60, 9);
        j["models"] = {"knn", "llm", "router"};
        j["router"] = {{"threshold", threshold}};
        RunOptions quiet;
        quiet.write_reports = false;
        if (!run_experiment(parse_config(j), quiet).complete) return {false, "run incomplete"};
        const auto data = load_run(dir / "run");
        const auto reference = threshold == 0.0 ? ModelKind::Knn : ModelKind::Llm;
        const std::string expected_route = threshold == 0.0 ? "knn" : "llm";
        std::size_t same = 0, total = 0;
        for (const auto& [cell, records] : data.cells) {
            for (const auto& r : records) {
                ++total;
                const auto* a = r.outcome(ModelKind::Router);
                const auto* b = r.outcome(reference);
                if (a && b && a->label && a->label == b->label && r.route && r.route->route == expected_route) ++same;
            }
        }
        ok = ok && same == total && total > 0;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%sthreshold %.1f: router == %s on %zu/%zu queries", detail.empty() ? "" : "; ",
                      threshold, expected_route.c_str(), same, total);
        detail += buf;
    }
    return {ok, detail};
}

// ------------------------------------------------------------------ 9

Outcome annotation_arithmetic() {
    testing::TempDir dir;
    json j = {{"datasets", {{{"name", "ann"}, {"synthetic", {{"n_train", 300}, {"n_test", 200}, {"seed", 2}}}}}},
              {"sample", {{"n", 200}, {"seed", 0}}},
              {"k_values", {1, 10, 20}},
              {"models", {"knn"}},
              {"embedding", {{"provider", "mock"}, {"dims", 32}}},
              {"output_dir", (dir / "run").string()}};
    const auto config = parse_config(j);
    RunOptions quiet;
    quiet.write_reports = false;
    run_experiment(config, quiet);
    const auto data = load_run(dir / "run");
    const auto ds = materialize_dataset(config.datasets[0]);
    const auto sets = neighbor_sets_for_dataset(data, ds);
    BatchRequest big;
    big.dataset = "ann";
    big.n_queries = 50;
    big.k_values = {1, 10, 20};
    big.annotators = {"annotator"};
    BatchRequest small = big;
    small.n_queries = 2;
    small.k_values = {10, 20};
    const auto n_big = make_annotation_batch(ds, sets, big).size();
    const auto n_small = make_annotation_batch(ds, sets, small).size();
    return {n_big == 1550 && n_small == 60,
            fmt("n=50, k={1,10,20}: %.0f tasks; n=2, k={10,20}: %.0f tasks", double(n_big), double(n_small))};
}

// ------------------------------------------------------------------ 10

Outcome resumability() {
    testing::TempDir clean_dir, cut_dir;
    auto clean_cfg = testing::synthetic_config(clean_dir / "run", 500, 100, 11);
    auto cut_cfg = testing::synthetic_config(cut_dir / "run", 500, 100, 11);
    const auto clean = run_experiment(parse_config(clean_cfg));
    if (!clean.complete) return {false, "clean run incomplete"};

    RunOptions half;
    half.stop_after = clean.queries_total / 2;
    const auto first = run_experiment(parse_config(cut_cfg), half);
    if (first.complete || std::filesystem::exists(cut_dir / "run" / "reports")) {
        return {false, "interrupted run claimed completion"};
    }
    const auto second = run_experiment(parse_config(cut_cfg));
    if (!second.complete) return {false, "resumed run incomplete"};

    std::size_t files = 0, identical = 0;
    for (const auto& name : report_names()) {
        for (const char* ext : {".csv", ".jsonl"}) {
            ++files;
            const auto pa = clean_dir / "run" / "reports" / (name + ext);
            const auto pb = cut_dir / "run" / "reports" / (name + ext);
            if (std::filesystem::exists(pa) && std::filesystem::exists(pb) && testing::slurp(pa) == testing::slurp(pb)) {
                ++identical;
            }
        }
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "stopped after %zu of %zu queries, resumed %zu; %zu/%zu report files byte-identical",
                  first.processed, clean.queries_total, second.processed, identical, files);
    return {identical == files && second.already_done == first.processed, buf};
}

} // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"published r/R^2 consistency", 1.0, published_r_squared},
        {"kappa oracle equivalence", 10.0, kappa_oracle},
        {"retrieval oracle", 5.0, retrieval_oracle},
        {"LR gradient check", 5.0, lr_gradient},
        {"kNN invariants", 5.0, knn_invariants},
        {"pipeline sanity anchor", 30.0, pipeline_anchor},
        {"relevance-agreement correlation", 60.0, relevance_correlation},
        {"router boundary equivalences", 10.0, router_boundaries},
        {"annotation arithmetic", 5.0, annotation_arithmetic},
        {"resumability", 60.0, resumability},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& c = criteria[i];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("%s [%2zu] %s: %s (%.2f s, budget %.0f s%s)\n", pass ? "PASS" : "FAIL", i + 1, c.name.c_str(),
                    o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed;
}
