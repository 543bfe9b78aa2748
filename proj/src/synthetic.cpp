#include "knnicl/synthetic.hpp"

#include "knnicl/hashing.hpp"

#include <random>

namespace knnicl {

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
    std::mt19937_64 rng(mix64(spec.seed ^ fnv1a64(spec.name)));
    auto draw = [&rng](std::size_t bound) { return static_cast<std::size_t>(unit_interval(rng()) * static_cast<double>(bound)); };

    auto make = [&](std::size_t count, const char* split) {
        std::vector<Example> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t cls = draw(spec.labels.size());
            std::string text;
            for (std::size_t t = 0; t < spec.tokens_per_text; ++t) {
                if (t) text += ' ';
                if (unit_interval(rng()) < spec.purity) {
                    text += "c" + std::to_string(cls) + "w" + std::to_string(draw(spec.class_vocab));
                } else {
                    text += "s" + std::to_string(draw(spec.shared_vocab));
                }
            }
            out.push_back(Example{std::string(split) + "-" + std::to_string(i), std::move(text), spec.labels[cls]});
        }
        return out;
    };

    auto train = make(spec.n_train, "train");
    auto test = make(spec.n_test, "test");
    return make_dataset(spec.name, std::move(train), std::move(test), LabelSpace::from_observed(spec.labels));
}

} // namespace knnicl
