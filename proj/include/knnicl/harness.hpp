#pragma once

#include "knnicl/analysis.hpp"
#include "knnicl/annotation.hpp"
#include "knnicl/config.hpp"
#include "knnicl/records.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace knnicl {

struct RunOptions {
    /// Stop claiming new queries after this many have been processed in this
    /// invocation. Used to simulate an interruption.
    std::optional<std::size_t> stop_after;
    /// Write reports/ once every cell is complete.
    bool write_reports = true;
    /// Receives one line per notable event (cell progress, failures).
    std::function<void(const std::string&)> log;
};

struct RunSummary {
    std::filesystem::path run_dir;
    std::string config_digest;
    std::size_t queries_total = 0;
    std::size_t already_done = 0;
    std::size_t processed = 0;
    bool complete = false;
    std::size_t llm_calls = 0;
    /// "<dataset>/k<k>/<query_id>: <what failed>"
    std::vector<std::string> failures;
};

/// Runs (or resumes) every (dataset, k) cell of the configuration in
/// config.output_dir. Configuration problems throw ConfigError before any
/// record is written; per-query failures are recorded and never abort.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Embeds train and sampled test examples into <run>/embeddings. Returns the
/// per-dataset stats.
std::map<std::string, EmbedStats> embed_datasets(const ExperimentConfig& config);

using CellKey = std::pair<std::string, std::size_t>; // (dataset, k)

/// A finished (or partial) run read back from disk. Records in every cell are
/// sorted by query id.
struct RunData {
    std::filesystem::path run_dir;
    RunManifest manifest;
    std::map<CellKey, std::vector<RunRecord>> cells;
    /// Human judgments from the annotation store.
    std::vector<AnnotationTask> judged_tasks;

    PredictionSet predictions(const CellKey& cell, ModelKind model) const;
    std::map<std::string, NeighborSet> neighbor_sets(const CellKey& cell) const;
    std::map<std::string, std::string> gold(const CellKey& cell) const;
    LabelSpace labels(const std::string& dataset) const;
};

RunData load_run(const std::filesystem::path& run_dir);

/// Neighbor sets of a run, per k, with texts filled from the dataset.
std::map<std::size_t, std::map<std::string, NeighborSet>> neighbor_sets_for_dataset(const RunData& run,
                                                                                    const Dataset& dataset);

// ---- reports ---------------------------------------------------------------

struct Table {
    std::string name;
    std::string schema;
    std::vector<std::string> columns;
    /// Strings, integers, reals, booleans; null marks a missing value.
    std::vector<std::vector<nlohmann::json>> rows;
};

enum class ExportFormat { Csv, Jsonl };

ExportFormat parse_export_format(std::string_view name);

/// Report names accepted by export_reports: accuracy, kappa, contingency,
/// correlation, grid, relevance, agreement, same_label, or all.
std::vector<std::string> report_names();

Table build_report(const RunData& run, const std::string& name);

std::string render(const Table& table, ExportFormat format);

/// Writes <dest>/<name>.<csv|jsonl> for each requested report and returns the
/// paths. dest defaults to <run>/reports. Throws ReportError naming a report
/// that cannot be produced.
std::vector<std::filesystem::path> export_reports(const std::filesystem::path& run_dir, const std::string& what,
                                                  ExportFormat format,
                                                  std::optional<std::filesystem::path> dest = std::nullopt);

} // namespace knnicl
