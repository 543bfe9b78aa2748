#include "knnicl/retrieval.hpp"

#include <benchmark/benchmark.h>

#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <random>

using namespace knnicl;

namespace {

struct Fixture {
    Dataset dataset;
    std::optional<EmbeddingCache> cache;
    std::unique_ptr<Index> index;
    EmbeddingVector query;
};

const Fixture& fixture(std::size_t n) {
    static std::map<std::size_t, std::unique_ptr<Fixture>> built;
    auto& slot = built[n];
    if (slot) return *slot;
    slot = std::make_unique<Fixture>();
    constexpr std::size_t dims = 384;
    std::mt19937_64 rng(n);
    std::normal_distribution<float> g;
    slot->dataset.name = "bench";
    slot->cache = EmbeddingCache::in_memory("bench", dims);
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "b%07zu", i);
        slot->dataset.train.push_back(Example{id, "", "L" + std::to_string(i % 4)});
        EmbeddingVector v;
        v.values.resize(dims);
        for (auto& x : v.values) x = g(rng);
        slot->cache->put_batch({{id, v}});
    }
    slot->index = std::make_unique<Index>(Index::build(*slot->cache, slot->dataset));
    slot->query.values.resize(dims);
    for (auto& x : slot->query.values) x = g(rng);
    return *slot;
}

void BM_topk_serial(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(topk_serial(*f.index, f.query, state.range(1)));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_topk_parallel(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(topk_parallel(*f.index, f.query, state.range(1)));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void sizes(benchmark::internal::Benchmark* b) {
    for (long n : {1000, 10000, 100000})
        for (long k : {1, 10, 30}) b->Args({n, k});
}

} // namespace

BENCHMARK(BM_topk_serial)->Apply(sizes)->UseRealTime();
BENCHMARK(BM_topk_parallel)->Apply(sizes)->UseRealTime();

BENCHMARK_MAIN();
