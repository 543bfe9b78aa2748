#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

// Scalar kernels shared by the embedding and retrieval code. Every cosine in
// the project goes through these so the serial, parallel and oracle paths
// produce bit-identical similarities.
namespace knnicl::kernels {

inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

inline double norm(std::span<const float> a) noexcept { return std::sqrt(dot(a, a)); }

inline double cosine_from_parts(double dot_ab, double norm_a, double norm_b) noexcept {
    return std::clamp(dot_ab / (norm_a * norm_b), -1.0, 1.0);
}

} // namespace knnicl::kernels
