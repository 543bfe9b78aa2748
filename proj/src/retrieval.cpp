#include "knnicl/retrieval.hpp"

#include "knnicl/errors.hpp"
#include "knnicl/hashing.hpp"
#include "knnicl/kernels.hpp"

#include <algorithm>
#include <cstdio>
#include <queue>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace knnicl {

namespace {

struct Candidate {
    double similarity;
    std::size_t row;
};

// Bounded heap with the worst retained candidate on top.
class TopKHeap {
public:
    TopKHeap(std::size_t k, const Index& index) : k_(k), index_(&index) {}

    struct Worse {
        const TopKHeap* self;
        bool operator()(const Candidate& a, const Candidate& b) const { return self->better(a, b); }
    };
    Worse cmp() const { return Worse{this}; }

    // true when a ranks strictly before b
    bool better(const Candidate& a, const Candidate& b) const {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return index_->id(a.row) < index_->id(b.row);
    }

    void push(const Candidate& c) {
        if (heap_.size() < k_) {
            heap_.push_back(c);
            std::push_heap(heap_.begin(), heap_.end(), cmp());
        } else if (better(c, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), cmp());
            heap_.back() = c;
            std::push_heap(heap_.begin(), heap_.end(), cmp());
        }
    }

    void merge(const TopKHeap& other) {
        for (const auto& c : other.heap_) push(c);
    }

    std::vector<Candidate> sorted() const {
        auto out = heap_;
        std::sort(out.begin(), out.end(), [this](const Candidate& a, const Candidate& b) { return better(a, b); });
        return out;
    }

private:
    std::size_t k_;
    const Index* index_;
    std::vector<Candidate> heap_;
};

double query_norm(const Index& index, const EmbeddingVector& query) {
    if (query.dims() != index.dims()) {
        throw ContractError("query dims " + std::to_string(query.dims()) + " do not match index dims " +
                            std::to_string(index.dims()));
    }
    const double n = kernels::norm(query.view());
    if (n == 0.0) throw ContractError("zero query vector");
    return n;
}

NeighborSet materialize(const Index& index, const std::vector<Candidate>& ranked, std::size_t k,
                        std::string query_id) {
    NeighborSet ns;
    ns.query_id = std::move(query_id);
    ns.k = k;
    ns.neighbors.reserve(ranked.size());
    for (const auto& c : ranked) {
        const auto& e = index.example(c.row);
        ns.neighbors.push_back(Neighbor{e.id, c.similarity, e.label, e.text});
    }
    return ns;
}

} // namespace

std::string NeighborSet::digest() const {
    std::string buf = query_id + '\x1f' + std::to_string(k);
    char sim[32];
    for (const auto& n : neighbors) {
        std::snprintf(sim, sizeof sim, "%.17g", n.similarity);
        buf += '\x1f' + n.example_id + '\x1e' + sim;
    }
    return hex64(fnv1a64(buf));
}

Index Index::build(const EmbeddingCache& cache, const Dataset& dataset) {
    Index index;
    index.dims_ = cache.dims();
    index.data_.reserve(dataset.train.size() * index.dims_);
    std::vector<std::string> missing;
    for (const auto& e : dataset.train) {
        auto v = cache.get(e.id);
        if (!v) {
            missing.push_back(e.id);
            continue;
        }
        const double n = kernels::norm(v->view());
        if (n == 0.0) throw ContractError("train example '" + e.id + "' has a zero embedding");
        index.data_.insert(index.data_.end(), v->values.begin(), v->values.end());
        index.norms_.push_back(n);
        index.ids_.push_back(e.id);
        index.examples_.push_back(e);
    }
    if (!missing.empty()) {
        std::string msg = "embedding cache is missing " + std::to_string(missing.size()) + " train ids:";
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
        if (missing.size() > 20) msg += " ...";
        throw std::runtime_error(msg);
    }
    return index;
}

NeighborSet topk_serial(const Index& index, const EmbeddingVector& query, std::size_t k, std::string query_id) {
    if (k == 0) throw ContractError("k must be positive");
    const double qn = query_norm(index, query);
    TopKHeap heap(std::min(k, index.size()), index);
    for (std::size_t i = 0; i < index.size(); ++i) {
        const double s = kernels::cosine_from_parts(kernels::dot(index.row(i), query.view()), index.row_norm(i), qn);
        heap.push({s, i});
    }
    return materialize(index, heap.sorted(), k, std::move(query_id));
}

NeighborSet topk_parallel(const Index& index, const EmbeddingVector& query, std::size_t k, std::string query_id) {
    if (k == 0) throw ContractError("k must be positive");
    const double qn = query_norm(index, query);
    const std::size_t keep = std::min(k, index.size());
    const auto n = static_cast<std::ptrdiff_t>(index.size());

    TopKHeap merged(keep, index);
#ifdef _OPENMP
#pragma omp parallel
    {
        TopKHeap local(keep, index);
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const auto row = static_cast<std::size_t>(i);
            const double s =
                kernels::cosine_from_parts(kernels::dot(index.row(row), query.view()), index.row_norm(row), qn);
            local.push({s, row});
        }
#pragma omp critical(knnicl_topk_merge)
        merged.merge(local);
    }
#else
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto row = static_cast<std::size_t>(i);
        merged.push({kernels::cosine_from_parts(kernels::dot(index.row(row), query.view()), index.row_norm(row), qn),
                     row});
    }
#endif
    return materialize(index, merged.sorted(), k, std::move(query_id));
}

NeighborSet topk(const Index& index, const EmbeddingVector& query, std::size_t k, std::string query_id) {
    return topk_parallel(index, query, k, std::move(query_id));
}

} // namespace knnicl
