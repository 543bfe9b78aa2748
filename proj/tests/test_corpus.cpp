#include "support.hpp"

#include "knnicl/corpus.hpp"
#include "knnicl/errors.hpp"
#include "knnicl/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace knnicl;

TEST_SUITE("corpus") {

TEST_CASE("label space is inferred sorted and deduplicated") {
    testing::TempDir dir;
    testing::spit(dir / "train.jsonl",
                  "{\"id\":\"a\",\"text\":\"stocks rally\",\"label\":\"World\"}\n"
                  "{\"id\":\"b\",\"text\":\"goal in extra time\",\"label\":\"Sports\"}\n"
                  "{\"id\":\"c\",\"text\":\"summit ends\",\"label\":\"World\"}\n");
    testing::spit(dir / "test.jsonl", "{\"id\":\"d\",\"text\":\"cup final\",\"label\":\"Sports\"}\n");
    const auto ds = load_dataset({"news", dir / "train.jsonl", dir / "test.jsonl", RecordFormat::Jsonl, {}});
    CHECK(ds.label_space.labels() == std::vector<std::string>{"Sports", "World"});
    CHECK(ds.train.size() == 3);
    CHECK(ds.test.size() == 1);
    CHECK(ds.find_test("d") != nullptr);
    CHECK(ds.find_train("d") == nullptr);
}

TEST_CASE("a label manifest fixes the order") {
    testing::TempDir dir;
    testing::spit(dir / "train.jsonl", "{\"text\":\"x\",\"label\":\"b\"}\n{\"text\":\"y\",\"label\":\"a\"}\n");
    testing::spit(dir / "test.jsonl", "{\"text\":\"z\",\"label\":\"a\"}\n");
    const auto ds = load_dataset(
        {"m", dir / "train.jsonl", dir / "test.jsonl", RecordFormat::Jsonl, std::vector<std::string>{"b", "a", "c"}});
    CHECK(ds.label_space.labels() == std::vector<std::string>{"b", "a", "c"});
    // missing ids become <split>-<row>
    CHECK(ds.train[1].id == "train-1");
    CHECK(ds.test[0].id == "test-0");
}

TEST_CASE("empty label names the offending line") {
    testing::TempDir dir;
    testing::spit(dir / "train.jsonl",
                  "{\"text\":\"fine\",\"label\":\"x\"}\n\n{\"text\":\"broken\",\"label\":\"\"}\n");
    try {
        (void)load_examples(dir / "train.jsonl", RecordFormat::Jsonl, "train");
        FAIL("expected a RecordError");
    } catch (const RecordError& e) {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
}

TEST_CASE("malformed json and duplicate ids are rejected") {
    testing::TempDir dir;
    testing::spit(dir / "a.jsonl", "{\"text\":\"ok\",\"label\":\"x\"}\n{not json\n");
    CHECK_THROWS_AS(load_examples(dir / "a.jsonl", RecordFormat::Jsonl, "train"), RecordError);
    testing::spit(dir / "b.jsonl", "{\"id\":\"1\",\"text\":\"ok\",\"label\":\"x\"}\n{\"id\":\"1\",\"text\":\"ok\",\"label\":\"x\"}\n");
    CHECK_THROWS_AS(load_examples(dir / "b.jsonl", RecordFormat::Jsonl, "train"), RecordError);
}

TEST_CASE("csv round trip keeps quotes, commas and newlines") {
    testing::TempDir dir;
    std::vector<Example> ex = {{"e1", "plain text", "pos"},
                               {"e2", "has, a comma", "neg"},
                               {"e3", "say \"hi\"\nnext line", "pos"},
                               {"e4", "caf\xc3\xa9 au lait", "neg"}};
    write_examples(dir / "x.csv", RecordFormat::Csv, ex);
    CHECK(load_examples(dir / "x.csv", RecordFormat::Csv, "train") == ex);
    write_examples(dir / "x.jsonl", RecordFormat::Jsonl, ex);
    CHECK(load_examples(dir / "x.jsonl", RecordFormat::Jsonl, "train") == ex);
}

TEST_CASE("csv header must name text and label") {
    testing::TempDir dir;
    testing::spit(dir / "bad.csv", "id,body,label\n1,hello,x\n");
    CHECK_THROWS_AS(load_examples(dir / "bad.csv", RecordFormat::Csv, "train"), RecordError);
}

TEST_CASE("make_dataset enforces disjoint splits and known labels") {
    std::vector<Example> train = {{"a", "t", "x"}, {"c", "t", "y"}};
    CHECK_THROWS_AS(make_dataset("d", train, {{"a", "t", "x"}}), ContractError);
    CHECK_THROWS_AS(make_dataset("d", train, {{"b", "t", "y"}}, LabelSpace({"x", "z"})), ContractError);
    CHECK_NOTHROW(make_dataset("d", train, {{"b", "t", "x"}}));
}

Dataset numbered_test_split(std::size_t n) {
    std::vector<Example> test;
    for (std::size_t i = 0; i < n; ++i) test.push_back({"q" + std::to_string(i), "text", "x"});
    return make_dataset("sst2", {{"t0", "text", "x"}, {"t1", "text", "y"}}, std::move(test));
}

TEST_CASE("sample_test takes everything when n exceeds the split") {
    const auto ds = numbered_test_split(872);
    const auto s = sample_test(ds, 1000, 0);
    REQUIRE(s.example_ids.size() == 872);
    for (std::size_t i = 0; i < 872; ++i) CHECK(s.example_ids[i] == ds.test[i].id);
}

TEST_CASE("sample_test is a pure function of its inputs") {
    const auto ds = numbered_test_split(100);
    const auto a = sample_test(ds, 3, 7);
    const auto b = sample_test(ds, 3, 7);
    const auto c = sample_test(ds, 3, 8);
    CHECK(a.example_ids == b.example_ids);
    CHECK(a.example_ids.size() == 3);
    CHECK(a.example_ids != c.example_ids);
    CHECK(a.seed == 7);
}

TEST_CASE("sample_test draws distinct ids in stored order") {
    const auto ds = numbered_test_split(500);
    for (std::int64_t seed = 0; seed < 20; ++seed) {
        const auto s = sample_test(ds, 50, seed);
        std::set<std::string> uniq(s.example_ids.begin(), s.example_ids.end());
        CHECK(uniq.size() == 50);
        std::vector<std::size_t> pos;
        for (const auto& id : s.example_ids) pos.push_back(std::stoul(id.substr(1)));
        CHECK(std::is_sorted(pos.begin(), pos.end()));
    }
    CHECK_THROWS_AS(sample_test(ds, 0, 1), ContractError);
}

TEST_CASE("synthetic datasets are deterministic and respect the spec") {
    SyntheticSpec spec;
    spec.n_train = 100;
    spec.n_test = 20;
    const auto a = make_synthetic_dataset(spec);
    const auto b = make_synthetic_dataset(spec);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.train.size() == 100);
    CHECK(a.test.size() == 20);
    CHECK(a.label_space.size() == 4);
    spec.seed = 2;
    CHECK_FALSE(make_synthetic_dataset(spec).train == a.train);
}

}
