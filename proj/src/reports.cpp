#include "knnicl/harness.hpp"

#include "knnicl/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace knnicl {

using nlohmann::json;

PredictionSet RunData::predictions(const CellKey& cell, ModelKind model) const {
    PredictionSet ps;
    auto it = cells.find(cell);
    if (it == cells.end()) return ps;
    for (const auto& r : it->second) {
        const auto* o = r.outcome(model);
        if (!o) continue;
        if (o->label) {
            ps.add(Prediction{r.query_id, *o->label, model, std::nullopt});
        } else {
            ps.failed.insert(r.query_id);
        }
    }
    return ps;
}

std::map<std::string, NeighborSet> RunData::neighbor_sets(const CellKey& cell) const {
    std::map<std::string, NeighborSet> out;
    auto it = cells.find(cell);
    if (it == cells.end()) return out;
    for (const auto& r : it->second) out.emplace(r.query_id, r.neighbors);
    return out;
}

std::map<std::string, std::string> RunData::gold(const CellKey& cell) const {
    std::map<std::string, std::string> out;
    auto it = cells.find(cell);
    if (it == cells.end()) return out;
    for (const auto& r : it->second) out.emplace(r.query_id, r.gold);
    return out;
}

LabelSpace RunData::labels(const std::string& dataset) const { return LabelSpace(manifest.dataset(dataset).labels); }

RunData load_run(const std::filesystem::path& run_dir) {
    RunData run;
    run.run_dir = run_dir;
    run.manifest = read_manifest(run_dir);
    for (const auto& d : run.manifest.datasets) {
        for (auto k : run.manifest.k_values) {
            auto records = read_records(cell_path(run_dir, d.name, k), run.manifest.config_digest);
            // A query recorded twice keeps its latest record.
            std::map<std::string, RunRecord> by_query;
            for (auto& r : records) by_query.insert_or_assign(r.query_id, std::move(r));
            auto& cell = run.cells[{d.name, k}];
            for (auto& [qid, r] : by_query) cell.push_back(std::move(r));
        }
    }
    if (std::filesystem::exists(run_dir / "annotation")) {
        for (auto& t : AnnotationStore::open(run_dir).tasks()) {
            if (t.status == TaskStatus::Done) run.judged_tasks.push_back(std::move(t));
        }
    }
    return run;
}

std::map<std::size_t, std::map<std::string, NeighborSet>> neighbor_sets_for_dataset(const RunData& run,
                                                                                    const Dataset& dataset) {
    std::map<std::size_t, std::map<std::string, NeighborSet>> out;
    for (auto k : run.manifest.k_values) {
        auto sets = run.neighbor_sets({dataset.name, k});
        for (auto& [qid, ns] : sets) {
            for (auto& n : ns.neighbors) {
                const Example* e = dataset.find_train(n.example_id);
                if (!e) throw ContractError("run references training example '" + n.example_id + "' missing from " + dataset.name);
                n.text = e->text;
            }
        }
        out[k] = std::move(sets);
    }
    return out;
}

ExportFormat parse_export_format(std::string_view name) {
    if (name == "csv") return ExportFormat::Csv;
    if (name == "jsonl") return ExportFormat::Jsonl;
    throw ConfigError("unknown export format '" + std::string(name) + "' (csv or jsonl)");
}

std::vector<std::string> report_names() {
    return {"accuracy", "kappa", "contingency", "correlation", "grid", "relevance", "agreement", "same_label"};
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<std::pair<ModelKind, ModelKind>> model_pairs(const RunManifest& m) {
    auto models = m.models;
    std::sort(models.begin(), models.end());
    std::vector<std::pair<ModelKind, ModelKind>> out;
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = i + 1; j < models.size(); ++j) out.emplace_back(models[i], models[j]);
    }
    return out;
}

std::string name(ModelKind m) { return std::string(to_string(m)); }

void require_records(const RunData& run, const std::string& report) {
    for (const auto& [key, records] : run.cells) {
        if (records.empty()) {
            throw ReportError(report + ": cell " + key.first + "/k" + std::to_string(key.second) +
                              " has no records; run the experiment first");
        }
    }
}

/// Verdicts of every annotator for one cell: the LLM's from the run records,
/// humans' from the annotation store.
std::map<std::string, std::vector<RelevanceVerdict>> verdicts_by_annotator(const RunData& run, const CellKey& cell) {
    std::map<std::string, std::vector<RelevanceVerdict>> out;
    if (auto it = run.cells.find(cell); it != run.cells.end()) {
        for (const auto& r : it->second) {
            for (const auto& v : r.verdicts) out[v.annotator_id].push_back(v);
        }
    }
    for (const auto& t : run.judged_tasks) {
        if (t.dataset == cell.first && t.k == cell.second) out[t.annotator_id].push_back(t.verdict());
    }
    return out;
}

struct RelevanceSummary {
    std::size_t complete = 0;
    std::size_t incomplete = 0;
    std::optional<double> mean;
};

RelevanceSummary summarize_relevance(const RunData& run, const CellKey& cell, const std::string& annotator,
                                     const std::vector<RelevanceVerdict>& verdicts) {
    std::map<std::string, std::vector<RelevanceVerdict>> by_query;
    for (const auto& v : verdicts) by_query[v.query_id].push_back(v);
    const auto sets = run.neighbor_sets(cell);
    RelevanceSummary s;
    double total = 0.0;
    for (const auto& [qid, vs] : by_query) {
        auto ns = sets.find(qid);
        if (ns == sets.end()) {
            ++s.incomplete;
            continue;
        }
        std::set<std::string> judged;
        for (const auto& v : vs) judged.insert(v.example_id);
        const bool all = std::all_of(ns->second.neighbors.begin(), ns->second.neighbors.end(),
                                     [&](const Neighbor& n) { return judged.contains(n.example_id); });
        if (!all) {
            ++s.incomplete;
            continue;
        }
        total += relevance_score(ns->second, vs, annotator).score;
        ++s.complete;
    }
    if (s.complete) s.mean = total / static_cast<double>(s.complete);
    return s;
}

Table accuracy_table(const RunData& run) {
    Table t{"accuracy", "knnicl.accuracy/1", {"dataset", "k", "model", "accuracy", "n_valid", "n_correct", "n_excluded"}, {}};
    for (const auto& d : run.manifest.datasets) {
        for (auto k : run.manifest.k_values) {
            const CellKey cell{d.name, k};
            const auto gold = run.gold(cell);
            for (auto m : run.manifest.models) {
                const auto a = accuracy(run.predictions(cell, m), gold);
                t.rows.push_back({d.name, k, name(m), opt(a.accuracy), a.n_valid, a.n_correct, a.n_excluded});
            }
        }
    }
    return t;
}

Table kappa_table(const RunData& run) {
    Table t{"kappa",
            "knnicl.kappa/1",
            {"dataset", "k", "model_a", "model_b", "n", "kappa", "p_o", "p_e", "degenerate", "n_excluded"},
            {}};
    for (const auto& d : run.manifest.datasets) {
        const LabelSpace ls(d.labels);
        for (auto k : run.manifest.k_values) {
            const CellKey cell{d.name, k};
            for (auto [a, b] : model_pairs(run.manifest)) {
                const auto pa = run.predictions(cell, a);
                const auto pb = run.predictions(cell, b);
                std::set<std::string> excluded(pa.failed.begin(), pa.failed.end());
                excluded.insert(pb.failed.begin(), pb.failed.end());
                const auto m = contingency(pa, pb, ls);
                if (m.n == 0) {
                    t.rows.push_back({d.name, k, name(a), name(b), 0, nullptr, nullptr, nullptr, nullptr, excluded.size()});
                    continue;
                }
                const auto r = cohen_kappa(m);
                t.rows.push_back({d.name, k, name(a), name(b), m.n, r.kappa, r.observed, r.expected, r.degenerate,
                                  excluded.size()});
            }
        }
    }
    return t;
}

Table contingency_table(const RunData& run) {
    Table t{"contingency",
            "knnicl.contingency/1",
            {"dataset", "k", "model_a", "model_b", "label_a", "label_b", "count"},
            {}};
    for (const auto& d : run.manifest.datasets) {
        const LabelSpace ls(d.labels);
        for (auto k : run.manifest.k_values) {
            const CellKey cell{d.name, k};
            for (auto [a, b] : model_pairs(run.manifest)) {
                const auto m = contingency(run.predictions(cell, a), run.predictions(cell, b), ls);
                for (std::size_t i = 0; i < m.labels.size(); ++i) {
                    for (std::size_t j = 0; j < m.labels.size(); ++j) {
                        t.rows.push_back({d.name, k, name(a), name(b), m.labels[i], m.labels[j], m.counts[i][j]});
                    }
                }
            }
        }
    }
    return t;
}

Table relevance_table(const RunData& run) {
    Table t{"relevance",
            "knnicl.relevance/1",
            {"dataset", "k", "annotator", "n_queries", "mean_relevance", "n_incomplete"},
            {}};
    for (const auto& d : run.manifest.datasets) {
        for (auto k : run.manifest.k_values) {
            const CellKey cell{d.name, k};
            for (const auto& [annotator, vs] : verdicts_by_annotator(run, cell)) {
                const auto s = summarize_relevance(run, cell, annotator, vs);
                t.rows.push_back({d.name, k, annotator, s.complete, opt(s.mean), s.incomplete});
            }
        }
    }
    return t;
}

Table agreement_table(const RunData& run) {
    Table t{"agreement",
            "knnicl.relevance_agreement/1",
            {"dataset", "k", "annotator_a", "annotator_b", "n", "kappa", "p_o", "p_e", "inclusion_a_in_b"},
            {}};
    auto human_first = [](const std::string& x, const std::string& y) {
        const bool hx = x.starts_with("human:"), hy = y.starts_with("human:");
        if (hx != hy) return hx;
        return x < y;
    };
    for (const auto& d : run.manifest.datasets) {
        for (auto k : run.manifest.k_values) {
            const auto by = verdicts_by_annotator(run, {d.name, k});
            std::vector<std::string> names;
            for (const auto& [a, vs] : by) names.push_back(a);
            std::sort(names.begin(), names.end(), human_first);
            for (std::size_t i = 0; i < names.size(); ++i) {
                for (std::size_t j = i + 1; j < names.size(); ++j) {
                    const auto& va = by.at(names[i]);
                    const auto& vb = by.at(names[j]);
                    std::map<JudgedPair, bool> in_b;
                    for (const auto& v : vb) in_b[{v.query_id, v.example_id}] = v.relevant;
                    std::set<JudgedPair> rel_a, rel_b;
                    std::size_t n = 0;
                    for (const auto& v : va) {
                        auto it = in_b.find({v.query_id, v.example_id});
                        if (it == in_b.end()) continue;
                        ++n;
                        if (v.relevant) rel_a.insert(it->first);
                        if (it->second) rel_b.insert(it->first);
                    }
                    if (n == 0) {
                        t.rows.push_back({d.name, k, names[i], names[j], 0, nullptr, nullptr, nullptr, nullptr});
                        continue;
                    }
                    const auto r = relevance_agreement(va, vb);
                    t.rows.push_back({d.name, k, names[i], names[j], n, r.kappa, r.observed, r.expected,
                                      opt(inclusion_score(rel_a, rel_b))});
                }
            }
        }
    }
    return t;
}

Table correlation_table(const RunData& run) {
    Table t{"correlation",
            "knnicl.correlation/1",
            {"k", "annotator", "model_a", "model_b", "n", "r", "r_squared"},
            {}};
    for (auto k : run.manifest.k_values) {
        // annotator -> dataset -> mean relevance
        std::map<std::string, std::map<std::string, double>> relevance;
        for (const auto& d : run.manifest.datasets) {
            const CellKey cell{d.name, k};
            for (const auto& [annotator, vs] : verdicts_by_annotator(run, cell)) {
                const auto s = summarize_relevance(run, cell, annotator, vs);
                if (s.mean) relevance[annotator][d.name] = *s.mean;
            }
        }
        for (const auto& [annotator, per_dataset] : relevance) {
            for (auto [a, b] : model_pairs(run.manifest)) {
                std::vector<double> x, y;
                for (const auto& d : run.manifest.datasets) {
                    auto rel = per_dataset.find(d.name);
                    if (rel == per_dataset.end()) continue;
                    const CellKey cell{d.name, k};
                    const auto m = contingency(run.predictions(cell, a), run.predictions(cell, b), LabelSpace(d.labels));
                    if (m.n == 0) continue;
                    x.push_back(rel->second);
                    y.push_back(cohen_kappa(m).kappa);
                }
                json r = nullptr, r2 = nullptr;
                if (x.size() >= 2) {
                    const auto c = pearson(x, y);
                    r = opt(c.r);
                    r2 = opt(c.r_squared);
                }
                t.rows.push_back({k, annotator, name(a), name(b), x.size(), r, r2});
            }
        }
    }
    return t;
}

Table grid_table(const RunData& run) {
    Table t{"grid", "knnicl.accuracy_grid/1", {"dataset", "k", "model_a", "model_b", "acc_a", "acc_b", "abs_diff"}, {}};
    for (const auto& d : run.manifest.datasets) {
        for (auto k : run.manifest.k_values) {
            const CellKey cell{d.name, k};
            const auto gold = run.gold(cell);
            std::vector<AccuracyPair> pairs;
            for (auto [a, b] : model_pairs(run.manifest)) {
                pairs.push_back(AccuracyPair{d.name, k, name(a), name(b), accuracy(run.predictions(cell, a), gold).accuracy,
                                             accuracy(run.predictions(cell, b), gold).accuracy});
            }
            const auto grid = accuracy_diff_grid(pairs);
            for (std::size_t i = 0; i < grid.size(); ++i) {
                t.rows.push_back({d.name, k, grid[i].model_a, grid[i].model_b, opt(pairs[i].acc_a), opt(pairs[i].acc_b),
                                  opt(grid[i].abs_diff)});
            }
        }
    }
    return t;
}

Table same_label_table(const RunData& run) {
    Table t{"same_label",
            "knnicl.same_label/1",
            {"dataset", "k", "model_a", "model_b", "n", "n_all_same", "pct_all_same_label", "agree_given_same",
             "agree_given_diff"},
            {}};
    for (const auto& d : run.manifest.datasets) {
        for (auto k : run.manifest.k_values) {
            const CellKey cell{d.name, k};
            const auto sets = run.neighbor_sets(cell);
            for (auto [a, b] : model_pairs(run.manifest)) {
                const auto s = same_label_stats(sets, run.predictions(cell, a), run.predictions(cell, b));
                t.rows.push_back({d.name, k, name(a), name(b), s.n, s.n_same, s.pct_all_same_label,
                                  opt(s.agree_rate_given_same), opt(s.agree_rate_given_diff)});
            }
        }
    }
    return t;
}

std::string csv_field(const json& v) {
    if (v.is_null()) return "";
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    if (v.is_number_float()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", v.get<double>());
        return buf;
    }
    const auto s = v.get<std::string>();
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

} // namespace

Table build_report(const RunData& run, const std::string& report) {
    require_records(run, report);
    if (report == "accuracy") return accuracy_table(run);
    if (report == "kappa") return kappa_table(run);
    if (report == "contingency") return contingency_table(run);
    if (report == "correlation") return correlation_table(run);
    if (report == "grid") return grid_table(run);
    if (report == "relevance") return relevance_table(run);
    if (report == "agreement") return agreement_table(run);
    if (report == "same_label") return same_label_table(run);
    throw ReportError("unknown report '" + report + "'");
}

std::string render(const Table& table, ExportFormat format) {
    std::string out;
    if (format == ExportFormat::Csv) {
        out += "# schema=" + table.schema + "\n";
        for (std::size_t i = 0; i < table.columns.size(); ++i) out += (i ? "," : "") + table.columns[i];
        out += '\n';
        for (const auto& row : table.rows) {
            for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_field(row[i]);
            out += '\n';
        }
        return out;
    }
    for (const auto& row : table.rows) {
        nlohmann::ordered_json j;
        j["schema"] = table.schema;
        for (std::size_t i = 0; i < row.size(); ++i) j[table.columns[i]] = row[i];
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<std::filesystem::path> export_reports(const std::filesystem::path& run_dir, const std::string& what,
                                                  ExportFormat format, std::optional<std::filesystem::path> dest) {
    std::vector<std::string> names;
    if (what == "all") {
        names = report_names();
    } else {
        const auto all = report_names();
        if (std::find(all.begin(), all.end(), what) == all.end()) throw ReportError("unknown report '" + what + "'");
        names.push_back(what);
    }
    const auto run = load_run(run_dir);
    const auto dir = dest.value_or(run_dir / "reports");
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    for (const auto& n : names) {
        const auto text = render(build_report(run, n), format);
        const auto path = dir / (n + (format == ExportFormat::Csv ? ".csv" : ".jsonl"));
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << text;
            if (!out) throw ReportError("cannot write " + tmp);
        }
        std::filesystem::rename(tmp, path);
        written.push_back(path);
    }
    return written;
}

} // namespace knnicl
