#include "support.hpp"

#include "knnicl/errors.hpp"
#include "knnicl/harness.hpp"
#include "knnicl/records.hpp"

#include <doctest.h>

#include <sstream>

using namespace knnicl;
using nlohmann::json;

namespace {

std::vector<json> jsonl(const std::filesystem::path& p) {
    std::istringstream in(testing::slurp(p));
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line)) out.push_back(json::parse(line));
    return out;
}

std::vector<std::string> csv_lines(const std::filesystem::path& p) {
    std::istringstream in(testing::slurp(p));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

bool strict_majority(const NeighborSet& ns) {
    std::map<std::string, std::size_t> c;
    for (const auto& n : ns.neighbors) ++c[n.label];
    for (const auto& [l, n] : c)
        if (2 * n > ns.neighbors.size()) return true;
    return false;
}

} // namespace

TEST_SUITE("harness") {

TEST_CASE("kNN-only run on a tiny dataset is offline and reports accuracy") {
    testing::TempDir dir;
    json j = {{"datasets", {{{"name", "tiny"}, {"synthetic", {{"n_train", 14}, {"n_test", 6}, {"seed", 5}}}}}},
              {"models", {"knn", "wknn", "lr"}},
              {"output_dir", (dir / "run").string()}};
    const auto config = parse_config(j);
    const auto s = run_experiment(config);
    CHECK(s.complete);
    CHECK(s.llm_calls == 0);
    CHECK(s.queries_total == 6 * 4);
    CHECK(s.processed == 24);
    CHECK(s.failures.empty());

    const auto rows = jsonl(dir / "run" / "reports" / "accuracy.jsonl");
    CHECK(rows.size() == 4 * 3);
    for (const auto& r : rows) {
        CHECK(r["schema"] == "knnicl.accuracy/1");
        CHECK(r["n_valid"] == 6);
    }
    // k = 30 exceeds the 14 train examples: every neighbor set is the whole split
    for (const auto& rec : read_records(cell_path(dir / "run", "tiny", 30))) CHECK(rec.neighbors.neighbors.size() == 14);
    CHECK(std::filesystem::exists(dir / "run" / "reports" / "accuracy.csv"));
}

TEST_CASE("every predictor sees the same neighbors and the records are complete") {
    testing::TempDir dir;
    const auto config = parse_config(testing::synthetic_config(dir / "run"));
    const auto s = run_experiment(config);
    REQUIRE(s.complete);
    CHECK(s.failures.empty());
    CHECK(s.llm_calls > 0);

    const auto data = load_run(dir / "run");
    const auto ds = materialize_dataset(config.datasets[0]);
    auto provider = make_embedding_provider(config.embedding);
    auto cache = EmbeddingCache::open(dir / "run" / "embeddings" / "synth.knne", provider->id(), provider->dims());
    const auto index = Index::build(cache, ds);

    std::size_t strict = 0;
    for (std::size_t k : config.k_values) {
        const auto& recs = data.cells.at({"synth", k});
        REQUIRE(recs.size() == 40);
        for (const auto& r : recs) {
            CHECK(r.config_digest == config.digest());
            CHECK(r.neighbor_digest == r.neighbors.digest());
            const auto fresh = topk_serial(index, *cache.get(r.query_id), k, r.query_id);
            REQUIRE(fresh.neighbors.size() == r.neighbors.neighbors.size());
            for (std::size_t i = 0; i < fresh.neighbors.size(); ++i) {
                CHECK(fresh.neighbors[i].example_id == r.neighbors.neighbors[i].example_id);
            }
            CHECK(r.predictions.size() == config.models.size());
            for (auto m : config.models) CHECK(r.outcome(m) != nullptr);
            CHECK(r.verdicts.size() == r.neighbors.neighbors.size());
            REQUIRE(r.route.has_value());
            CHECK(r.route->source == "llm_annotator");
            CHECK(r.gold == ds.find_test(r.query_id)->label);
            if (strict_majority(r.neighbors)) {
                ++strict;
                CHECK(*r.outcome(ModelKind::Llm)->label == *r.outcome(ModelKind::Knn)->label);
            }
        }
    }
    CHECK(strict > 0);
}

TEST_CASE("accuracy report agrees with a recount from the records") {
    testing::TempDir dir;
    const auto config = parse_config(testing::synthetic_config(dir / "run"));
    run_experiment(config);
    const auto data = load_run(dir / "run");
    for (const auto& row : jsonl(dir / "run" / "reports" / "accuracy.jsonl")) {
        const auto model = parse_model_kind(row["model"].get<std::string>());
        std::size_t n = 0, correct = 0;
        for (const auto& r : data.cells.at({"synth", row["k"].get<std::size_t>()})) {
            const auto* o = r.outcome(model);
            if (!o || !o->label) continue;
            ++n;
            correct += *o->label == r.gold;
        }
        CHECK(row["n_valid"] == n);
        CHECK(row["n_correct"] == correct);
        CHECK(row["accuracy"].get<double>() == doctest::Approx(double(correct) / double(n)).epsilon(1e-6));
    }
}

TEST_CASE("an interrupted run resumes to byte-identical reports") {
    testing::TempDir clean_dir, resumed_dir;
    const auto clean = parse_config(testing::synthetic_config(clean_dir / "run"));
    REQUIRE(run_experiment(clean).complete);

    const auto cfg = parse_config(testing::synthetic_config(resumed_dir / "run"));
    RunOptions stop;
    stop.stop_after = 50;
    const auto first = run_experiment(cfg, stop);
    CHECK_FALSE(first.complete);
    CHECK(first.processed == 50);
    CHECK_FALSE(std::filesystem::exists(resumed_dir / "run" / "reports"));
    CHECK_THROWS_AS(export_reports(resumed_dir / "run", "accuracy", ExportFormat::Csv), ReportError);

    // a torn trailing line, as left by a kill mid-write
    {
        std::ofstream out(cell_path(resumed_dir / "run", "synth", 5), std::ios::app);
        out << "{\"schema\":\"knnicl.record/1\",\"query";
    }
    const auto second = run_experiment(cfg);
    CHECK(second.complete);
    CHECK(second.already_done == 50);
    CHECK(second.processed == 70);

    for (const auto& name : report_names()) {
        for (const char* ext : {".csv", ".jsonl"}) {
            CHECK(testing::slurp(clean_dir / "run" / "reports" / (name + ext)) ==
                  testing::slurp(resumed_dir / "run" / "reports" / (name + ext)));
        }
    }
    // a third invocation has nothing left to do
    const auto third = run_experiment(cfg);
    CHECK(third.processed == 0);
    CHECK(third.llm_calls == 0);
}

TEST_CASE("a run directory refuses a different configuration") {
    testing::TempDir dir;
    auto j = testing::synthetic_config(dir / "run");
    j["models"] = {"knn"};
    j["llm"] = {{"provider", "none"}};
    j["relevance"] = {{"annotators", json::array()}};
    run_experiment(parse_config(j));
    j["k_values"] = {1, 5};
    CHECK_THROWS_AS(run_experiment(parse_config(j)), ConfigError);
    j["k_values"] = {1, 5, 10};
    j["workers"] = 1;
    CHECK(run_experiment(parse_config(j)).complete);
}

TEST_CASE("bad datasets fail before any record is written") {
    testing::TempDir dir;
    json j = {{"datasets", {{{"name", "f"}, {"train", (dir / "missing.jsonl").string()}, {"test", (dir / "missing.jsonl").string()}}}},
              {"output_dir", (dir / "run").string()}};
    CHECK_THROWS_AS(run_experiment(parse_config(j)), ConfigError);
    CHECK_FALSE(std::filesystem::exists(dir / "run" / "records"));
}

TEST_CASE("exports are deterministic and self-describing") {
    testing::TempDir dir;
    run_experiment(parse_config(testing::synthetic_config(dir / "run")));
    const auto before = testing::slurp(dir / "run" / "reports" / "kappa.csv");
    export_reports(dir / "run", "all", ExportFormat::Csv);
    CHECK(testing::slurp(dir / "run" / "reports" / "kappa.csv") == before);

    const auto acc = csv_lines(dir / "run" / "reports" / "accuracy.csv");
    CHECK(acc[0] == "# schema=knnicl.accuracy/1");
    CHECK(acc[1] == "dataset,k,model,accuracy,n_valid,n_correct,n_excluded");
    CHECK(acc.size() == 2 + 3 * 6);

    const auto corr = jsonl(dir / "run" / "reports" / "correlation.jsonl");
    REQUIRE_FALSE(corr.empty());
    for (const auto& line : csv_lines(dir / "run" / "reports" / "correlation.jsonl")) {
        CHECK(line.rfind("{\"schema\":\"knnicl.correlation/1\",\"k\":", 0) == 0);
    }
    for (const auto& r : corr) {
        for (const char* key : {"k", "annotator", "model_a", "model_b", "n", "r", "r_squared"}) CHECK(r.contains(key));
        CHECK(r["n"] == 1);
        CHECK(r["r"].is_null());
    }

    testing::TempDir other;
    const auto paths = export_reports(dir / "run", "grid", ExportFormat::Jsonl, other.path());
    REQUIRE(paths.size() == 1);
    CHECK(paths[0] == other / "grid.jsonl");
    for (const auto& r : jsonl(paths[0])) {
        if (!r["abs_diff"].is_null()) {
            CHECK(r["abs_diff"].get<double>() ==
                  doctest::Approx(std::abs(r["acc_a"].get<double>() - r["acc_b"].get<double>())).epsilon(1e-6));
        }
    }
    CHECK_THROWS_AS(export_reports(dir / "run", "bogus", ExportFormat::Csv), ReportError);
    CHECK_THROWS_AS(parse_export_format("xml"), ConfigError);
}

TEST_CASE("contingency and kappa reports agree") {
    testing::TempDir dir;
    run_experiment(parse_config(testing::synthetic_config(dir / "run")));
    const auto data = load_run(dir / "run");
    const auto kappa = build_report(data, "kappa");
    const auto cont = build_report(data, "contingency");
    CHECK(kappa.columns.front() == "dataset");
    CHECK(!cont.rows.empty());
    const auto labels = data.labels("synth");
    for (const auto& row : kappa.rows) {
        const CellKey cell{"synth", row[1].get<std::size_t>()};
        const auto a = parse_model_kind(row[2].get<std::string>()), b = parse_model_kind(row[3].get<std::string>());
        const auto m = contingency(data.predictions(cell, a), data.predictions(cell, b), labels);
        CHECK(row[4] == m.n);
        CHECK(row[5].get<double>() == doctest::Approx(cohen_kappa(m).kappa).epsilon(1e-6));
    }
}

TEST_CASE("record files reject foreign digests and malformed lines") {
    testing::TempDir dir;
    RunRecord r;
    r.config_digest = "abc";
    r.dataset = "d";
    r.k = 1;
    r.query_id = "q";
    r.gold = "x";
    r.neighbors = {"q", 1, {{"e", 0.5, "x", ""}}};
    r.neighbor_digest = r.neighbors.digest();
    r.predictions.push_back({ModelKind::Knn, std::string("x"), std::nullopt, std::nullopt, 0.0});
    {
        RecordWriter w(dir / "c.jsonl");
        w.append(r);
        CHECK(w.appended() == 1);
    }
    const auto back = read_records(dir / "c.jsonl", "abc");
    REQUIRE(back.size() == 1);
    CHECK(back[0].neighbors.neighbors[0].example_id == "e");
    CHECK(back[0].outcome(ModelKind::Knn)->label == "x");
    CHECK_THROWS_AS(read_records(dir / "c.jsonl", "other"), RecordError);

    {
        std::ofstream out(dir / "c.jsonl", std::ios::app);
        out << "{\"partial\":";
    }
    CHECK(repair_jsonl(dir / "c.jsonl") == 11);
    CHECK(read_records(dir / "c.jsonl").size() == 1);
    testing::spit(dir / "bad.jsonl", "not json\n");
    CHECK_THROWS_AS(read_records(dir / "bad.jsonl"), RecordError);
}

}
