#pragma once

#include "knnicl/corpus.hpp"
#include "knnicl/embedding.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace knnicl {

struct Neighbor {
    std::string example_id;
    double similarity = 0.0;
    std::string label;
    std::string text;

    bool operator==(const Neighbor&) const = default;
};

/// Top-k demonstrations for one query, most similar first. The shared
/// evidence every predictor sees.
struct NeighborSet {
    std::string query_id;
    std::size_t k = 0;
    std::vector<Neighbor> neighbors;

    bool operator==(const NeighborSet&) const = default;

    /// Stable hex digest of (query_id, k, ids, similarities).
    std::string digest() const;
};

/// Immutable exact-search index over the train split. Vectors are stored
/// row-major in one contiguous buffer with precomputed norms.
class Index {
public:
    /// Throws std::runtime_error listing every train id missing from the cache.
    static Index build(const EmbeddingCache& cache, const Dataset& dataset);

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dims() const noexcept { return dims_; }

    std::span<const float> row(std::size_t i) const noexcept { return {data_.data() + i * dims_, dims_}; }
    double row_norm(std::size_t i) const noexcept { return norms_[i]; }
    const std::string& id(std::size_t i) const noexcept { return ids_[i]; }
    const Example& example(std::size_t i) const noexcept { return examples_[i]; }

private:
    std::size_t dims_ = 0;
    std::vector<float> data_;
    std::vector<double> norms_;
    std::vector<std::string> ids_;
    std::vector<Example> examples_;
};

/// Exact top-k by cosine similarity, descending; ties by ascending example
/// id. Uses the parallel scan.
NeighborSet topk(const Index& index, const EmbeddingVector& query, std::size_t k, std::string query_id = {});

/// Single-threaded reference scan with one bounded heap.
NeighborSet topk_serial(const Index& index, const EmbeddingVector& query, std::size_t k, std::string query_id = {});

/// OpenMP scan: per-thread bounded heaps merged at the end. Produces results
/// identical to topk_serial.
NeighborSet topk_parallel(const Index& index, const EmbeddingVector& query, std::size_t k,
                          std::string query_id = {});

} // namespace knnicl
