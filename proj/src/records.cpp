#include "knnicl/records.hpp"

#include "knnicl/errors.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace knnicl {

using nlohmann::json;

const ModelOutcome* RunRecord::outcome(ModelKind model) const {
    for (const auto& p : predictions) {
        if (p.model == model) return &p;
    }
    return nullptr;
}

namespace {

json optional_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> read_optional_string(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

} // namespace

json to_json(const RunRecord& r) {
    json ids = json::array(), labels = json::array(), sims = json::array();
    for (const auto& n : r.neighbors.neighbors) {
        ids.push_back(n.example_id);
        labels.push_back(n.label);
        sims.push_back(n.similarity);
    }
    json preds = json::array();
    for (const auto& p : r.predictions) {
        json pj = {{"model", to_string(p.model)},
                   {"label", optional_string(p.label)},
                   {"error", optional_string(p.error)},
                   {"latency_ms", p.latency_ms}};
        if (p.raw_response) pj["raw"] = *p.raw_response;
        preds.push_back(std::move(pj));
    }
    json verdicts = json::array();
    for (const auto& v : r.verdicts) {
        verdicts.push_back({{"example_id", v.example_id}, {"annotator", v.annotator_id}, {"relevant", v.relevant}});
    }
    json route = nullptr;
    if (r.route) {
        route = {{"route", r.route->route},
                 {"relevance", r.route->relevance},
                 {"threshold", r.route->threshold},
                 {"source", r.route->source}};
    }
    return json{{"schema", kRecordSchema},
                {"config_digest", r.config_digest},
                {"dataset", r.dataset},
                {"k", r.k},
                {"query_id", r.query_id},
                {"gold", r.gold},
                {"neighbors", {{"digest", r.neighbor_digest}, {"ids", ids}, {"labels", labels}, {"similarities", sims}}},
                {"predictions", preds},
                {"relevance", verdicts},
                {"failures", r.failures},
                {"route", route},
                {"elapsed_ms", r.elapsed_ms}};
}

RunRecord record_from_json(const json& j) {
    if (j.value("schema", "") != kRecordSchema) throw std::runtime_error("unknown record schema");
    RunRecord r;
    r.config_digest = j.at("config_digest").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.query_id = j.at("query_id").get<std::string>();
    r.gold = j.at("gold").get<std::string>();
    const auto& nj = j.at("neighbors");
    r.neighbor_digest = nj.at("digest").get<std::string>();
    const auto& ids = nj.at("ids");
    const auto& labels = nj.at("labels");
    const auto& sims = nj.at("similarities");
    if (ids.size() != labels.size() || ids.size() != sims.size()) throw std::runtime_error("neighbor arrays differ in length");
    r.neighbors.query_id = r.query_id;
    r.neighbors.k = r.k;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        r.neighbors.neighbors.push_back(
            Neighbor{ids[i].get<std::string>(), sims[i].get<double>(), labels[i].get<std::string>(), {}});
    }
    for (const auto& pj : j.at("predictions")) {
        ModelOutcome p;
        p.model = parse_model_kind(pj.at("model").get<std::string>());
        p.label = read_optional_string(pj, "label");
        p.error = read_optional_string(pj, "error");
        p.raw_response = read_optional_string(pj, "raw");
        p.latency_ms = pj.value("latency_ms", 0.0);
        r.predictions.push_back(std::move(p));
    }
    for (const auto& vj : j.at("relevance")) {
        r.verdicts.push_back(RelevanceVerdict{r.query_id, vj.at("example_id").get<std::string>(),
                                              vj.at("relevant").get<bool>(), vj.at("annotator").get<std::string>()});
    }
    r.failures = j.at("failures").get<std::vector<std::string>>();
    if (const auto& rj = j.at("route"); !rj.is_null()) {
        r.route = RouteInfo{rj.at("route").get<std::string>(), rj.at("relevance").get<double>(),
                            rj.at("threshold").get<double>(), rj.at("source").get<std::string>()};
    }
    r.elapsed_ms = j.value("elapsed_ms", 0.0);
    return r;
}

std::size_t repair_jsonl(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return 0;
    const auto size = std::filesystem::file_size(path);
    if (size == 0) return 0;
    std::string content;
    {
        std::ifstream in(path, std::ios::binary);
        content.assign(std::istreambuf_iterator<char>(in), {});
    }
    if (content.back() == '\n') return 0;
    const auto last_nl = content.rfind('\n');
    const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    std::filesystem::resize_file(path, keep);
    return content.size() - keep;
}

std::vector<RunRecord> read_records(const std::filesystem::path& path, const std::string& expected_digest) {
    std::vector<RunRecord> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        RunRecord r;
        try {
            r = record_from_json(json::parse(line));
        } catch (const std::exception& e) {
            throw RecordError(path.string(), lineno, e.what());
        }
        if (!expected_digest.empty() && r.config_digest != expected_digest) {
            throw RecordError(path.string(), lineno,
                              "record belongs to config " + r.config_digest + ", expected " + expected_digest);
        }
        out.push_back(std::move(r));
    }
    return out;
}

RecordWriter::RecordWriter(const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app | std::ios::binary);
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for append");
}

void RecordWriter::append(const RunRecord& record) {
    const std::string line = to_json(record).dump() + "\n";
    std::lock_guard lock(mutex_);
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw std::runtime_error("record write failed");
    ++appended_;
}

std::size_t RecordWriter::appended() const {
    std::lock_guard lock(mutex_);
    return appended_;
}

const ManifestDataset& RunManifest::dataset(const std::string& name) const {
    for (const auto& d : datasets) {
        if (d.name == name) return d;
    }
    throw ReportError("run has no dataset named '" + name + "'");
}

json to_json(const RunManifest& m) {
    json models = json::array();
    for (auto k : m.models) models.push_back(to_string(k));
    json datasets = json::array();
    for (const auto& d : m.datasets) {
        datasets.push_back({{"name", d.name},
                            {"labels", d.labels},
                            {"sample_ids", d.sample_ids},
                            {"task_description", d.task_description},
                            {"train_size", d.train_size}});
    }
    return json{{"schema", kManifestSchema},
                {"config_digest", m.config_digest},
                {"k_values", m.k_values},
                {"models", models},
                {"relevance_annotators", m.relevance_annotators},
                {"datasets", datasets},
                {"config", m.config}};
}

RunManifest manifest_from_json(const json& j) {
    if (j.value("schema", "") != kManifestSchema) throw ReportError("manifest has an unknown schema");
    RunManifest m;
    m.config_digest = j.at("config_digest").get<std::string>();
    m.config = j.at("config");
    m.k_values = j.at("k_values").get<std::vector<std::size_t>>();
    for (const auto& s : j.at("models")) m.models.push_back(parse_model_kind(s.get<std::string>()));
    m.relevance_annotators = j.at("relevance_annotators").get<std::vector<std::string>>();
    for (const auto& dj : j.at("datasets")) {
        m.datasets.push_back(ManifestDataset{dj.at("name").get<std::string>(),
                                             dj.at("labels").get<std::vector<std::string>>(),
                                             dj.at("sample_ids").get<std::vector<std::string>>(),
                                             dj.at("task_description").get<std::string>(),
                                             dj.at("train_size").get<std::size_t>()});
    }
    return m;
}

RunManifest read_manifest(const std::filesystem::path& run_dir) {
    const auto path = run_dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw ReportError("no manifest at " + path.string() + "; run the experiment first");
    try {
        return manifest_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw ReportError("manifest " + path.string() + ": " + e.what());
    }
}

void write_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest) {
    std::filesystem::create_directories(run_dir);
    const auto path = run_dir / "manifest.json";
    const auto tmp = run_dir / "manifest.json.tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << to_json(manifest).dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::filesystem::path cell_path(const std::filesystem::path& run_dir, const std::string& dataset, std::size_t k) {
    return run_dir / "records" / dataset / ("k" + std::to_string(k) + ".jsonl");
}

} // namespace knnicl
