#pragma once

#include "knnicl/classifiers.hpp"
#include "knnicl/corpus.hpp"
#include "knnicl/embedding.hpp"
#include "knnicl/llm.hpp"
#include "knnicl/synthetic.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace knnicl {

struct DatasetConfig {
    std::string name;
    /// File-backed dataset; exclusive with `synthetic`.
    std::optional<DatasetSource> source;
    std::optional<SyntheticSpec> synthetic;
    /// Used in the relevance-judgment prompt.
    std::string task_description;
};

struct EmbeddingConfig {
    std::string provider = "mock"; // mock | remote
    std::size_t dims = 64;
    std::uint64_t seed = 0;
    RemoteEmbeddingConfig remote;
    EmbedOptions options;
};

struct LlmConfig {
    std::string provider = "none"; // none | mock | http
    std::string model = "mock-llm";
    /// mock scripts: majority_echo | relevance_following | fixed
    std::string script = "majority_echo";
    std::string fixed_reply;
    double overlap_threshold = 0.5;
    std::uint64_t seed = 0;
    std::optional<std::string> prior_label;
    std::string url;
    std::string token_env;
    std::optional<std::filesystem::path> template_path;
    std::size_t max_concurrency = 4;
    double rate_per_second = 0.0;
    RetryPolicy retry{5, std::chrono::milliseconds(500), std::chrono::milliseconds(30'000)};
};

struct RouterConfig {
    double threshold = 0.5;
    bool weighted_knn = false;
    /// auto | llm | proxy
    std::string relevance_source = "auto";
};

/// A full experiment. Parsed from a JSON document; the keys are listed in the README.
struct ExperimentConfig {
    std::vector<DatasetConfig> datasets;
    std::size_t sample_n = 1000;
    std::int64_t sample_seed = 0;
    std::vector<std::size_t> k_values{1, 10, 20, 30};
    std::vector<ModelKind> models{ModelKind::Knn, ModelKind::WeightedKnn, ModelKind::Lr};
    /// "llm" makes the configured LLM judge every demonstration.
    std::vector<std::string> relevance_annotators;
    EmbeddingConfig embedding;
    LlmConfig llm;
    RouterConfig router;
    LogRegHyper lr;
    std::size_t workers = 4;
    std::filesystem::path output_dir = "runs/default";

    /// The parsed document, kept for the manifest and the digest.
    nlohmann::json document;

    bool has_model(ModelKind m) const;
    bool needs_llm() const;
    bool llm_annotates() const;

    /// Hex digest over every semantic field (everything except output_dir,
    /// workers and rate/concurrency limits).
    std::string digest() const;
};

/// Relative dataset/template paths resolve against `base_dir`. Throws
/// ConfigError on any invalid field, including inline credentials.
ExperimentConfig parse_config(const nlohmann::json& document, const std::filesystem::path& base_dir = {});
/// Normalized form of every semantic field; the digest is computed over it.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// "llm" when routing relevance comes from the LLM annotator, else "proxy".
std::string resolved_relevance_source(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& path);

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const EmbeddingConfig& config);

/// nullptr when provider is "none".
std::unique_ptr<ChatClient> make_chat_client(const LlmConfig& config);

Dataset materialize_dataset(const DatasetConfig& config);

} // namespace knnicl
