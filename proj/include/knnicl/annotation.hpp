#pragma once

#include "knnicl/corpus.hpp"
#include "knnicl/llm.hpp"
#include "knnicl/retrieval.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace knnicl {

enum class TaskStatus { Pending, Done };

struct AnnotationTask {
    std::string task_id;
    std::string dataset;
    std::size_t k = 0;
    std::string query_id;
    std::string query_text;
    std::string example_id;
    std::string example_text;
    std::string task_description;
    std::string annotator_id;
    TaskStatus status = TaskStatus::Pending;
    std::optional<bool> relevant;

    RelevanceVerdict verdict() const;
};

nlohmann::json to_json(const AnnotationTask& task);
AnnotationTask task_from_json(const nlohmann::json& j);

/// "alice" -> "human:alice"; ids that already carry a prefix are kept.
std::string human_annotator_id(std::string_view name);

struct BatchRequest {
    std::string dataset;
    std::string task_description;
    std::size_t n_queries = 50;
    std::int64_t seed = 0;
    std::vector<std::size_t> k_values{1, 10, 20};
    std::vector<std::string> annotators;
};

/// n_queries distinct queries per k, drawn without overlap across k so every
/// (query, example, annotator) triple appears once; every annotator gets the
/// same n_queries * sum(k) tasks. Throws ContractError when too few queries
/// have neighbor sets for all requested k.
std::vector<AnnotationTask> make_annotation_batch(
    const Dataset& dataset, const std::map<std::size_t, std::map<std::string, NeighborSet>>& neighbor_sets,
    const BatchRequest& request);

enum class SubmitStatus { Accepted, AlreadyDone, UnknownTask, WrongAnnotator };

struct SubmitResult {
    SubmitStatus status = SubmitStatus::Accepted;
    std::string message;
};

struct IngestReport {
    std::size_t read = 0;
    std::size_t applied = 0;
    std::vector<std::string> warnings;
    /// Task ids of judgments that reference no known task.
    std::vector<std::string> rejected;
};

struct AnnotatorProgress {
    std::string annotator_id;
    std::size_t done = 0;
    std::size_t total = 0;
};

/// Task list plus judgments for one run, persisted under <run>/annotation:
/// tasks.jsonl holds the batch, judgments.jsonl every accepted judgment in
/// arrival order. Safe for concurrent use.
class AnnotationStore {
public:
    /// Opens (or creates an empty) store. Replays judgments.jsonl.
    static AnnotationStore open(const std::filesystem::path& run_dir);

    /// In-memory store; nothing is persisted.
    static AnnotationStore in_memory();

    AnnotationStore(AnnotationStore&&) noexcept;
    AnnotationStore& operator=(AnnotationStore&&) noexcept;
    ~AnnotationStore();

    /// Adds tasks. Throws ContractError on a task id collision.
    void add_tasks(const std::vector<AnnotationTask>& tasks);

    std::size_t size() const;
    std::optional<AnnotationTask> task(const std::string& task_id) const;
    std::vector<AnnotationTask> tasks() const;

    /// Pending tasks of one annotator, ascending task id.
    std::vector<AnnotationTask> pending(const std::string& annotator_id) const;
    std::vector<AnnotatorProgress> progress() const;

    /// Interactive submission. The first completion wins; a later one on a
    /// done task is refused with AlreadyDone.
    SubmitResult submit(const std::string& task_id, bool relevant, const std::string& annotator_id = {});

    /// Bulk import of JSON lines {"task_id", "relevant"}. Later judgments on
    /// the same task replace earlier ones with a warning.
    IngestReport ingest(const std::filesystem::path& judgments_file);

    std::vector<RelevanceVerdict> verdicts() const;

private:
    AnnotationStore() = default;
    void persist_judgment(const std::string& task_id, bool relevant);

    std::optional<std::filesystem::path> dir_;
    std::map<std::string, AnnotationTask> tasks_;
    std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

} // namespace knnicl
