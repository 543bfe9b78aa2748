#include "knnicl/annotation.hpp"
#include "knnicl/config.hpp"
#include "knnicl/errors.hpp"
#include "knnicl/harness.hpp"
#include "knnicl/mock_llm.hpp"
#include "knnicl/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <pthread.h>
#include <cstdio>
#include <iostream>

using namespace knnicl;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::int64_t> seed;
    std::string out;
};

ExperimentConfig load(const Globals& g, bool apply_seed = true) {
    if (g.config_path.empty()) throw ConfigError("--config is required for this command");
    auto config = load_config(g.config_path);
    if (apply_seed && g.seed) {
        auto doc = config.document;
        doc["sample"]["seed"] = *g.seed;
        config = parse_config(doc, std::filesystem::path(g.config_path).parent_path());
    }
    if (!g.out.empty()) config.output_dir = g.out;
    return config;
}

std::filesystem::path run_dir(const Globals& g) {
    if (!g.out.empty()) return g.out;
    return load(g).output_dir;
}

std::vector<std::size_t> parse_k_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        auto comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(std::stoul(s.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

sigset_t block_termination_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    return set;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"knnicl: kNN, logistic regression and LLM in-context learning on shared retrieval evidence"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "Experiment config (JSON)");
    app.add_option("--seed", g.seed, "Override the test-sample seed (annotate-batch: the batch seed)");
    app.add_option("--out", g.out, "Run directory (overrides output_dir)");

    auto* embed = app.add_subcommand("embed", "Embed train and sampled test texts into the run's cache");

    auto* run = app.add_subcommand("run", "Run or resume the experiment");
    std::optional<std::size_t> stop_after;
    bool quiet = false;
    run->add_option("--stop-after", stop_after, "Stop after this many queries (simulates an interruption)");
    run->add_flag("--quiet", quiet, "Only print the summary");

    auto* batch = app.add_subcommand("annotate-batch", "Create human relevance-annotation tasks");
    std::string batch_dataset, batch_k = "1,10,20";
    std::size_t batch_n = 50;
    std::vector<std::string> annotators;
    batch->add_option("--dataset", batch_dataset, "Dataset name (default: first)");
    batch->add_option("--n", batch_n, "Queries per k")->capture_default_str();
    batch->add_option("--k", batch_k, "Comma-separated k values")->capture_default_str();
    batch->add_option("--annotator", annotators, "Annotator name (repeatable)")->required();

    auto* ingest = app.add_subcommand("ingest", "Import judgments from a JSON-lines file");
    std::string ingest_file;
    ingest->add_option("file", ingest_file, "Lines of {\"task_id\", \"relevant\"}")->required();

    auto* serve = app.add_subcommand("serve", "Serve annotation, status and classification endpoints");
    ServiceOptions sopts;
    sopts.port = 8080;
    sopts.ui_dir = KNNICL_UI_DIR;
    std::string ui_dir = KNNICL_UI_DIR;
    serve->add_option("--host", sopts.host)->capture_default_str();
    serve->add_option("--port", sopts.port)->capture_default_str();
    serve->add_option("--ui", ui_dir, "Static UI directory")->capture_default_str();

    auto* exp = app.add_subcommand("export", "Write report tables");
    std::string what = "all", format = "csv", dest;
    exp->add_option("--what", what, "accuracy|kappa|contingency|correlation|grid|relevance|agreement|same_label|all")
        ->capture_default_str();
    exp->add_option("--format", format, "csv|jsonl")->capture_default_str();
    exp->add_option("--dest", dest, "Output directory (default: <run>/reports)");

    auto* rt = app.add_subcommand("route", "Classify one text through the router");
    std::string text, rt_dataset;
    std::optional<std::size_t> rt_k;
    std::optional<double> rt_threshold;
    rt->add_option("--text", text)->required();
    rt->add_option("--k", rt_k);
    rt->add_option("--threshold", rt_threshold);
    rt->add_option("--dataset", rt_dataset);

    auto* mock = app.add_subcommand("mock-serve", "Run the scripted mock chat and embedding endpoints");
    int mock_port = 8090;
    std::string mock_script = "majority_echo";
    double mock_overlap = 0.5;
    std::size_t mock_dims = 64;
    mock->add_option("--port", mock_port)->capture_default_str();
    mock->add_option("--script", mock_script, "majority_echo|relevance_following")->capture_default_str();
    mock->add_option("--overlap-threshold", mock_overlap)->capture_default_str();
    mock->add_option("--dims", mock_dims)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*embed) {
            for (const auto& [name, s] : embed_datasets(load(g))) {
                std::printf("%s: %zu embedded, %zu already cached\n", name.c_str(), s.embedded, s.already_cached);
            }
        } else if (*run) {
            RunOptions opts;
            opts.stop_after = stop_after;
            if (!quiet) opts.log = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
            const auto s = run_experiment(load(g), opts);
            std::printf("run %s (config %s)\n", s.run_dir.string().c_str(), s.config_digest.c_str());
            std::printf("queries: %zu total, %zu already done, %zu processed now, %s\n", s.queries_total, s.already_done,
                        s.processed, s.complete ? "complete" : "INCOMPLETE");
            std::printf("llm calls: %zu\n", s.llm_calls);
            std::printf("failures: %zu\n", s.failures.size());
            for (const auto& f : s.failures) std::printf("  %s\n", f.c_str());
            return s.complete ? 0 : 3;
        } else if (*batch) {
            const auto config = load(g, false);
            const auto data = load_run(config.output_dir);
            const DatasetConfig* dc = &config.datasets.front();
            for (const auto& d : config.datasets) {
                if (d.name == batch_dataset) dc = &d;
            }
            if (!batch_dataset.empty() && dc->name != batch_dataset) throw ConfigError("unknown dataset " + batch_dataset);
            const auto ds = materialize_dataset(*dc);
            BatchRequest req;
            req.dataset = dc->name;
            req.task_description = dc->task_description;
            req.n_queries = batch_n;
            req.seed = g.seed.value_or(0);
            req.k_values = parse_k_list(batch_k);
            req.annotators = annotators;
            const auto tasks = make_annotation_batch(ds, neighbor_sets_for_dataset(data, ds), req);
            auto store = AnnotationStore::open(config.output_dir);
            store.add_tasks(tasks);
            std::printf("%zu tasks created (%zu per annotator)\n", tasks.size(), tasks.size() / annotators.size());
        } else if (*ingest) {
            auto store = AnnotationStore::open(run_dir(g));
            const auto r = store.ingest(ingest_file);
            for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
            for (const auto& id : r.rejected) std::fprintf(stderr, "rejected orphan judgment for task %s\n", id.c_str());
            std::printf("%zu judgments read, %zu applied, %zu rejected\n", r.read, r.applied, r.rejected.size());
            return r.rejected.empty() ? 0 : 4;
        } else if (*serve) {
            Service service(load(g, false));
            sopts.ui_dir = ui_dir;
            const auto set = block_termination_signals();
            const int port = service.start(sopts);
            std::printf("serving on http://%s:%d/\n", sopts.host.c_str(), port);
            std::fflush(stdout);
            int sig = 0;
            sigwait(&set, &sig);
            service.stop();
        } else if (*exp) {
            std::optional<std::filesystem::path> d;
            if (!dest.empty()) d = dest;
            for (const auto& p : export_reports(run_dir(g), what, parse_export_format(format), d)) {
                std::printf("%s\n", p.string().c_str());
            }
        } else if (*rt) {
            Service service(load(g, false));
            nlohmann::json body{{"text", text}};
            if (rt_k) body["k"] = *rt_k;
            if (rt_threshold) body["threshold"] = *rt_threshold;
            if (!rt_dataset.empty()) body["dataset"] = rt_dataset;
            const auto [status, out] = service.handle_classify(body);
            std::printf("%s\n", out.dump(2).c_str());
            return status == 200 ? 0 : 5;
        } else if (*mock) {
            mock::Script classifier = mock_script == "relevance_following"
                                          ? mock::relevance_following({mock_overlap, 0, std::nullopt})
                                          : mock::majority_echo();
            mock::MockServer server(mock::combined(classifier, mock::overlap_annotator(mock_overlap)),
                                    std::make_shared<MockEmbeddingProvider>(mock_dims, 0));
            const auto set = block_termination_signals();
            server.start(mock_port);
            std::printf("chat:  %s\nembed: %s\n", server.chat_url().c_str(), server.embed_url().c_str());
            std::fflush(stdout);
            int sig = 0;
            sigwait(&set, &sig);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
