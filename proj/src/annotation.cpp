#include "knnicl/annotation.hpp"

#include "knnicl/errors.hpp"
#include "knnicl/hashing.hpp"
#include "knnicl/records.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

namespace knnicl {

using nlohmann::json;

RelevanceVerdict AnnotationTask::verdict() const {
    if (!relevant) throw ContractError("task " + task_id + " has no judgment");
    return RelevanceVerdict{query_id, example_id, *relevant, annotator_id};
}

json to_json(const AnnotationTask& t) {
    return json{{"task_id", t.task_id},
                {"dataset", t.dataset},
                {"k", t.k},
                {"query_id", t.query_id},
                {"query_text", t.query_text},
                {"example_id", t.example_id},
                {"example_text", t.example_text},
                {"task_description", t.task_description},
                {"annotator_id", t.annotator_id},
                {"status", t.status == TaskStatus::Done ? "done" : "pending"},
                {"relevant", t.relevant ? json(*t.relevant) : json(nullptr)}};
}

AnnotationTask task_from_json(const json& j) {
    AnnotationTask t;
    t.task_id = j.at("task_id").get<std::string>();
    t.dataset = j.at("dataset").get<std::string>();
    t.k = j.at("k").get<std::size_t>();
    t.query_id = j.at("query_id").get<std::string>();
    t.query_text = j.at("query_text").get<std::string>();
    t.example_id = j.at("example_id").get<std::string>();
    t.example_text = j.at("example_text").get<std::string>();
    t.task_description = j.at("task_description").get<std::string>();
    t.annotator_id = j.at("annotator_id").get<std::string>();
    if (j.value("status", "pending") == "done" && j.contains("relevant") && !j.at("relevant").is_null()) {
        t.status = TaskStatus::Done;
        t.relevant = j.at("relevant").get<bool>();
    }
    return t;
}

std::string human_annotator_id(std::string_view name) {
    if (name.find(':') != std::string_view::npos) return std::string(name);
    return "human:" + std::string(name);
}

std::vector<AnnotationTask> make_annotation_batch(
    const Dataset& dataset, const std::map<std::size_t, std::map<std::string, NeighborSet>>& neighbor_sets,
    const BatchRequest& request) {
    if (request.k_values.empty()) throw ContractError("make_annotation_batch: no k values");
    if (request.annotators.empty()) throw ContractError("make_annotation_batch: no annotators");
    if (request.n_queries == 0) throw ContractError("make_annotation_batch: n_queries must be positive");
    if (std::set<std::size_t>(request.k_values.begin(), request.k_values.end()).size() != request.k_values.size()) {
        throw ContractError("make_annotation_batch: duplicate k values");
    }

    std::vector<std::string> pool;
    {
        const auto first = neighbor_sets.find(request.k_values.front());
        if (first != neighbor_sets.end()) {
            for (const auto& [qid, ns] : first->second) {
                const bool everywhere = std::all_of(request.k_values.begin(), request.k_values.end(), [&](std::size_t k) {
                    auto cell = neighbor_sets.find(k);
                    return cell != neighbor_sets.end() && cell->second.contains(qid);
                });
                if (everywhere) pool.push_back(qid);
            }
        }
    }
    const std::size_t needed = request.n_queries * request.k_values.size();
    if (pool.size() < needed) {
        throw ContractError("make_annotation_batch: need " + std::to_string(needed) + " queries with neighbor sets for every k, found " +
                            std::to_string(pool.size()));
    }

    std::mt19937_64 rng(mix64(fnv1a64(dataset.name) ^ static_cast<std::uint64_t>(request.seed)));
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);

    std::vector<std::string> annotators;
    for (const auto& a : request.annotators) annotators.push_back(human_annotator_id(a));

    std::vector<AnnotationTask> tasks;
    for (std::size_t b = 0; b < request.k_values.size(); ++b) {
        const std::size_t k = request.k_values[b];
        std::vector<std::string> block(pool.begin() + static_cast<std::ptrdiff_t>(b * request.n_queries),
                                       pool.begin() + static_cast<std::ptrdiff_t>((b + 1) * request.n_queries));
        std::sort(block.begin(), block.end());
        for (std::size_t q = 0; q < block.size(); ++q) {
            const auto& ns = neighbor_sets.at(k).at(block[q]);
            const Example* query = dataset.find_test(block[q]);
            if (!query) throw ContractError("make_annotation_batch: unknown query '" + block[q] + "'");
            for (std::size_t r = 0; r < ns.neighbors.size(); ++r) {
                const auto& n = ns.neighbors[r];
                const Example* demo = dataset.find_train(n.example_id);
                if (!demo) throw ContractError("make_annotation_batch: unknown example '" + n.example_id + "'");
                for (const auto& annotator : annotators) {
                    char id[64];
                    std::snprintf(id, sizeof id, "/k%03zu/q%04zu/n%03zu@", k, q, r);
                    AnnotationTask t;
                    t.task_id = dataset.name + id + annotator;
                    t.dataset = dataset.name;
                    t.k = k;
                    t.query_id = query->id;
                    t.query_text = query->text;
                    t.example_id = demo->id;
                    t.example_text = demo->text;
                    t.task_description = request.task_description;
                    t.annotator_id = annotator;
                    tasks.push_back(std::move(t));
                }
            }
        }
    }
    return tasks;
}

AnnotationStore::AnnotationStore(AnnotationStore&&) noexcept = default;
AnnotationStore& AnnotationStore::operator=(AnnotationStore&&) noexcept = default;
AnnotationStore::~AnnotationStore() = default;

AnnotationStore AnnotationStore::in_memory() { return AnnotationStore(); }

AnnotationStore AnnotationStore::open(const std::filesystem::path& run_dir) {
    AnnotationStore s;
    s.dir_ = run_dir / "annotation";
    std::filesystem::create_directories(*s.dir_);
    const auto tasks_path = *s.dir_ / "tasks.jsonl";
    const auto judgments_path = *s.dir_ / "judgments.jsonl";
    repair_jsonl(tasks_path);
    repair_jsonl(judgments_path);

    std::ifstream tin(tasks_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(tin, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto t = task_from_json(json::parse(line));
            s.tasks_.emplace(t.task_id, std::move(t));
        } catch (const std::exception& e) {
            throw RecordError(tasks_path.string(), lineno, e.what());
        }
    }
    std::ifstream jin(judgments_path);
    lineno = 0;
    while (std::getline(jin, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            auto it = s.tasks_.find(j.at("task_id").get<std::string>());
            if (it == s.tasks_.end()) throw std::runtime_error("judgment for unknown task");
            it->second.status = TaskStatus::Done;
            it->second.relevant = j.at("relevant").get<bool>();
        } catch (const std::exception& e) {
            throw RecordError(judgments_path.string(), lineno, e.what());
        }
    }
    return s;
}

void AnnotationStore::add_tasks(const std::vector<AnnotationTask>& tasks) {
    std::lock_guard lock(*mutex_);
    for (const auto& t : tasks) {
        if (tasks_.contains(t.task_id)) throw ContractError("duplicate annotation task id " + t.task_id);
    }
    std::ofstream out;
    if (dir_) {
        out.open(*dir_ / "tasks.jsonl", std::ios::app | std::ios::binary);
        if (!out) throw std::runtime_error("cannot append to annotation task list");
    }
    for (const auto& t : tasks) {
        auto pending = t;
        pending.status = TaskStatus::Pending;
        pending.relevant.reset();
        if (dir_) out << to_json(pending).dump() << '\n';
        tasks_.emplace(pending.task_id, std::move(pending));
    }
    if (dir_) out.flush();
}

std::size_t AnnotationStore::size() const {
    std::lock_guard lock(*mutex_);
    return tasks_.size();
}

std::optional<AnnotationTask> AnnotationStore::task(const std::string& task_id) const {
    std::lock_guard lock(*mutex_);
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) return std::nullopt;
    return it->second;
}

std::vector<AnnotationTask> AnnotationStore::tasks() const {
    std::lock_guard lock(*mutex_);
    std::vector<AnnotationTask> out;
    out.reserve(tasks_.size());
    for (const auto& [id, t] : tasks_) out.push_back(t);
    return out;
}

std::vector<AnnotationTask> AnnotationStore::pending(const std::string& annotator_id) const {
    std::lock_guard lock(*mutex_);
    std::vector<AnnotationTask> out;
    for (const auto& [id, t] : tasks_) {
        if (t.annotator_id == annotator_id && t.status == TaskStatus::Pending) out.push_back(t);
    }
    return out;
}

std::vector<AnnotatorProgress> AnnotationStore::progress() const {
    std::lock_guard lock(*mutex_);
    std::map<std::string, AnnotatorProgress> by;
    for (const auto& [id, t] : tasks_) {
        auto& p = by[t.annotator_id];
        p.annotator_id = t.annotator_id;
        ++p.total;
        if (t.status == TaskStatus::Done) ++p.done;
    }
    std::vector<AnnotatorProgress> out;
    for (auto& [a, p] : by) out.push_back(p);
    return out;
}

void AnnotationStore::persist_judgment(const std::string& task_id, bool relevant) {
    if (!dir_) return;
    std::ofstream out(*dir_ / "judgments.jsonl", std::ios::app | std::ios::binary);
    out << json{{"task_id", task_id}, {"relevant", relevant}}.dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot persist judgment for " + task_id);
}

SubmitResult AnnotationStore::submit(const std::string& task_id, bool relevant, const std::string& annotator_id) {
    std::lock_guard lock(*mutex_);
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) return {SubmitStatus::UnknownTask, "unknown task " + task_id};
    auto& t = it->second;
    if (!annotator_id.empty() && human_annotator_id(annotator_id) != t.annotator_id) {
        return {SubmitStatus::WrongAnnotator, "task " + task_id + " is assigned to " + t.annotator_id};
    }
    if (t.status == TaskStatus::Done) {
        return {SubmitStatus::AlreadyDone, "task " + task_id + " was already judged; the first judgment stands"};
    }
    persist_judgment(task_id, relevant);
    t.status = TaskStatus::Done;
    t.relevant = relevant;
    return {SubmitStatus::Accepted, "ok"};
}

IngestReport AnnotationStore::ingest(const std::filesystem::path& judgments_file) {
    IngestReport report;
    std::ifstream in(judgments_file);
    if (!in) throw std::runtime_error("cannot open " + judgments_file.string());
    std::vector<std::pair<std::string, bool>> parsed;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = json::parse(line);
            parsed.emplace_back(j.at("task_id").get<std::string>(), j.at("relevant").get<bool>());
        } catch (const std::exception& e) {
            throw RecordError(judgments_file.string(), lineno, e.what());
        }
    }

    std::lock_guard lock(*mutex_);
    for (const auto& [task_id, relevant] : parsed) {
        ++report.read;
        auto it = tasks_.find(task_id);
        if (it == tasks_.end()) {
            report.rejected.push_back(task_id);
            continue;
        }
        auto& t = it->second;
        if (t.status == TaskStatus::Done) {
            if (t.relevant == relevant) continue;
            report.warnings.push_back("task " + task_id + ": verdict changed to " + (relevant ? "relevant" : "not relevant") +
                                      " by a later judgment");
        }
        persist_judgment(task_id, relevant);
        t.status = TaskStatus::Done;
        t.relevant = relevant;
        ++report.applied;
    }
    return report;
}

std::vector<RelevanceVerdict> AnnotationStore::verdicts() const {
    std::lock_guard lock(*mutex_);
    std::vector<RelevanceVerdict> out;
    for (const auto& [id, t] : tasks_) {
        if (t.status == TaskStatus::Done) out.push_back(t.verdict());
    }
    return out;
}

} // namespace knnicl
