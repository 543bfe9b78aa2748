#include "support.hpp"

#include "knnicl/config.hpp"
#include "knnicl/errors.hpp"

#include <doctest.h>

using namespace knnicl;
using nlohmann::json;

namespace {

json minimal() {
    return {{"datasets", {{{"name", "s"}, {"synthetic", {{"n_train", 20}, {"n_test", 5}}}}}}};
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("defaults") {
    const auto c = parse_config(minimal());
    CHECK(c.k_values == std::vector<std::size_t>{1, 10, 20, 30});
    CHECK(c.models == std::vector<ModelKind>{ModelKind::Knn, ModelKind::WeightedKnn, ModelKind::Lr});
    CHECK(c.sample_n == 1000);
    CHECK(c.llm.provider == "none");
    CHECK_FALSE(c.needs_llm());
    CHECK(resolved_relevance_source(c) == "proxy");
    CHECK(c.datasets[0].task_description == "classify the text of dataset s");
}

TEST_CASE("k values must be positive and strictly ascending") {
    for (const json ks : {json{10, 1}, json{1, 1}, json{0, 5}, json::array()}) {
        auto j = minimal();
        j["k_values"] = ks;
        CHECK_THROWS_AS(parse_config(j), ConfigError);
    }
    auto j = minimal();
    j["k_values"] = {1, 5, 30};
    CHECK(parse_config(j).k_values == std::vector<std::size_t>{1, 5, 30});
}

TEST_CASE("inline credentials are rejected anywhere") {
    auto j = minimal();
    j["llm"] = {{"provider", "http"}, {"url", "http://x/v1"}, {"api_key", "sk-live"}};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = minimal();
    j["embedding"] = {{"provider", "remote"}, {"url", "http://x"}, {"provider_id", "e"}, {"Token", "abc"}};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = minimal();
    j["llm"] = {{"provider", "http"}, {"url", "http://x/v1"}, {"model", "m"}, {"token_env", "MY_TOKEN"}};
    const auto c = parse_config(j);
    CHECK(c.llm.token_env == "MY_TOKEN");
}

TEST_CASE("unknown keys and bad values are rejected") {
    auto j = minimal();
    j["modle"] = {"knn"};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = minimal();
    j["models"] = {"knn", "svm"};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = minimal();
    j["models"] = json::array();
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = minimal();
    j["router"] = {{"threshold", -0.1}};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = minimal();
    j["workers"] = 0;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = minimal();
    j["sample"] = {{"n", "many"}};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = minimal();
    j["datasets"][0]["name"] = "a/b";
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"datasets", json::array()}}), ConfigError);
}

TEST_CASE("LLM models need an LLM provider") {
    auto j = minimal();
    j["models"] = {"knn", "llm"};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j["llm"] = {{"provider", "mock"}};
    const auto c = parse_config(j);
    CHECK(c.needs_llm());
    CHECK(resolved_relevance_source(c) == "llm");
    CHECK(make_chat_client(c.llm) != nullptr);
    CHECK(make_chat_client(parse_config(minimal()).llm) == nullptr);
}

TEST_CASE("relative paths resolve against the config file") {
    testing::TempDir dir;
    std::filesystem::create_directories(dir / "data");
    testing::spit(dir / "data" / "train.jsonl", "{\"text\":\"a b\",\"label\":\"x\"}\n{\"text\":\"b d\",\"label\":\"y\"}\n");
    testing::spit(dir / "data" / "test.jsonl", "{\"text\":\"a c\",\"label\":\"x\"}\n");
    json j = {{"datasets", {{{"name", "files"}, {"train", "data/train.jsonl"}, {"test", "data/test.jsonl"}}}},
              {"output_dir", "runs/one"}};
    testing::spit(dir / "exp.json", j.dump());
    const auto c = load_config(dir / "exp.json");
    CHECK(c.output_dir == dir / "runs/one");
    const auto ds = materialize_dataset(c.datasets[0]);
    CHECK(ds.train.size() == 2);
    CHECK(ds.test[0].id == "test-0");
}

TEST_CASE("digest covers semantic fields only") {
    const auto base = parse_config(minimal());
    auto j = minimal();
    j["workers"] = 7;
    j["output_dir"] = "/elsewhere";
    j["llm"] = {{"max_concurrency", 9}, {"rate_per_second", 3.0}};
    CHECK(parse_config(j).digest() == base.digest());

    j = minimal();
    j["k_values"] = {1, 10};
    CHECK(parse_config(j).digest() != base.digest());
    j = minimal();
    j["sample"] = {{"seed", 4}};
    CHECK(parse_config(j).digest() != base.digest());
    j = minimal();
    j["router"] = {{"threshold", 0.7}};
    CHECK(parse_config(j).digest() != base.digest());
    j = minimal();
    j["datasets"][0]["synthetic"]["purity"] = 0.9;
    CHECK(parse_config(j).digest() != base.digest());
    CHECK(base.digest().size() == 16);
}

TEST_CASE("materialized synthetic datasets follow the config") {
    auto j = minimal();
    j["datasets"][0]["synthetic"]["labels"] = {"p", "q"};
    const auto ds = materialize_dataset(parse_config(j).datasets[0]);
    CHECK(ds.name == "s");
    CHECK(ds.train.size() == 20);
    CHECK(ds.label_space.labels() == std::vector<std::string>{"p", "q"});
}

}
