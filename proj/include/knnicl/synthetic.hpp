#pragma once

#include "knnicl/corpus.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace knnicl {

/// Bag-of-words corpus with planted class structure. Each token comes from
/// the example's class vocabulary with probability `purity`, otherwise from
/// a shared vocabulary, so purity controls how informative neighbors are.
struct SyntheticSpec {
    std::string name = "synthetic";
    std::vector<std::string> labels = {"Alpha", "Beta", "Delta", "Gamma"};
    std::size_t n_train = 2000;
    std::size_t n_test = 200;
    std::size_t tokens_per_text = 12;
    std::size_t class_vocab = 30;
    std::size_t shared_vocab = 300;
    double purity = 0.7;
    std::uint64_t seed = 1;
};

Dataset make_synthetic_dataset(const SyntheticSpec& spec);

} // namespace knnicl
