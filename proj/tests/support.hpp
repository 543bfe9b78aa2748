#pragma once

#include "knnicl/config.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <unistd.h>

namespace testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("knnicl-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
}

/// A small offline experiment over one synthetic dataset.
inline nlohmann::json synthetic_config(const std::filesystem::path& out_dir, std::size_t n_train = 200,
                                       std::size_t n_test = 40, std::uint64_t seed = 3) {
    return {
        {"datasets",
         {{{"name", "synth"},
           {"synthetic",
            {{"labels", {"Alpha", "Beta", "Delta", "Gamma"}},
             {"n_train", n_train},
             {"n_test", n_test},
             {"purity", 0.7},
             {"seed", seed}}}}}},
        {"sample", {{"n", n_test}, {"seed", 0}}},
        {"k_values", {1, 5, 10}},
        {"models", {"knn", "wknn", "lr", "llm", "llm_weighted", "router"}},
        {"relevance", {{"annotators", {"llm"}}}},
        {"embedding", {{"provider", "mock"}, {"dims", 32}}},
        {"llm", {{"provider", "mock"}, {"script", "majority_echo"}, {"overlap_threshold", 0.2}}},
        {"router", {{"threshold", 0.5}}},
        {"workers", 2},
        {"output_dir", out_dir.string()},
    };
}

} // namespace testing
