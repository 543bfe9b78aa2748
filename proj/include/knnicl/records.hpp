#pragma once

#include "knnicl/classifiers.hpp"
#include "knnicl/llm.hpp"
#include "knnicl/retrieval.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace knnicl {

inline constexpr std::string_view kRecordSchema = "knnicl.record/1";
inline constexpr std::string_view kManifestSchema = "knnicl.run/1";

struct ModelOutcome {
    ModelKind model = ModelKind::Knn;
    /// Absent when the model failed on this query.
    std::optional<std::string> label;
    std::optional<std::string> error;
    std::optional<std::string> raw_response;
    double latency_ms = 0.0;
};

struct RouteInfo {
    std::string route;
    double relevance = 0.0;
    double threshold = 0.0;
    std::string source;
};

/// Everything the run learned about one query in one (dataset, k) cell.
struct RunRecord {
    std::string config_digest;
    std::string dataset;
    std::size_t k = 0;
    std::string query_id;
    std::string gold;
    /// Neighbor texts are not persisted; they are recoverable from the dataset.
    NeighborSet neighbors;
    std::string neighbor_digest;
    std::vector<ModelOutcome> predictions;
    std::vector<RelevanceVerdict> verdicts;
    std::vector<std::string> failures;
    std::optional<RouteInfo> route;
    double elapsed_ms = 0.0;

    const ModelOutcome* outcome(ModelKind model) const;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

/// Drops a trailing partial line left by an interrupted writer. Returns the
/// number of bytes removed.
std::size_t repair_jsonl(const std::filesystem::path& path);

/// Reads every record of a cell file. Throws RecordError on malformed lines
/// and on a digest other than `expected_digest` (when non-empty).
std::vector<RunRecord> read_records(const std::filesystem::path& path, const std::string& expected_digest = {});

/// Append-only writer for one cell file. Every append is one flushed line.
class RecordWriter {
public:
    explicit RecordWriter(const std::filesystem::path& path);

    void append(const RunRecord& record);
    std::size_t appended() const;

private:
    mutable std::mutex mutex_;
    std::ofstream out_;
    std::size_t appended_ = 0;
};

struct ManifestDataset {
    std::string name;
    std::vector<std::string> labels;
    std::vector<std::string> sample_ids;
    std::string task_description;
    std::size_t train_size = 0;
};

struct RunManifest {
    std::string config_digest;
    nlohmann::json config;
    std::vector<std::size_t> k_values;
    std::vector<ModelKind> models;
    std::vector<std::string> relevance_annotators;
    std::vector<ManifestDataset> datasets;

    const ManifestDataset& dataset(const std::string& name) const;
};

nlohmann::json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);

RunManifest read_manifest(const std::filesystem::path& run_dir);
void write_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest);

std::filesystem::path cell_path(const std::filesystem::path& run_dir, const std::string& dataset, std::size_t k);

} // namespace knnicl
