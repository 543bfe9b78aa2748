#include "knnicl/harness.hpp"

#include "knnicl/errors.hpp"
#include "knnicl/router.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <semaphore>
#include <set>
#include <thread>

namespace knnicl {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Counts calls and caps how many are in flight at once.
class GuardedClient final : public ChatClient {
public:
    GuardedClient(ChatClient& inner, std::size_t max_concurrency)
        : inner_(inner), slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, max_concurrency))) {}

    std::string model_name() const override { return inner_.model_name(); }

    std::string complete(const ChatRequest& request) override {
        slots_.acquire();
        ++calls_;
        try {
            auto out = inner_.complete(request);
            slots_.release();
            return out;
        } catch (...) {
            slots_.release();
            throw;
        }
    }

    std::size_t calls() const { return calls_.load(); }

private:
    ChatClient& inner_;
    std::counting_semaphore<> slots_;
    std::atomic<std::size_t> calls_{0};
};

struct PreparedDataset {
    DatasetConfig config;
    Dataset dataset;
    SplitSample sample;
};

Dataset sampled_view(const Dataset& ds, const SplitSample& sample) {
    std::vector<Example> test;
    test.reserve(sample.example_ids.size());
    for (const auto& id : sample.example_ids) test.push_back(*ds.find_test(id));
    return make_dataset(ds.name, ds.train, std::move(test), ds.label_space);
}

std::vector<PreparedDataset> prepare_datasets(const ExperimentConfig& config) {
    std::vector<PreparedDataset> out;
    for (const auto& dc : config.datasets) {
        Dataset ds;
        try {
            ds = materialize_dataset(dc);
        } catch (const std::exception& e) {
            throw ConfigError("dataset '" + dc.name + "': " + e.what());
        }
        auto sample = sample_test(ds, config.sample_n, config.sample_seed);
        out.push_back(PreparedDataset{dc, std::move(ds), std::move(sample)});
    }
    return out;
}

RunManifest make_manifest(const ExperimentConfig& config, const std::vector<PreparedDataset>& prepared) {
    RunManifest m;
    m.config_digest = config.digest();
    m.config = config_to_json(config);
    m.k_values = config.k_values;
    m.models = config.models;
    m.relevance_annotators = config.relevance_annotators;
    for (const auto& p : prepared) {
        m.datasets.push_back(ManifestDataset{p.dataset.name, p.dataset.label_space.labels(), p.sample.example_ids,
                                             p.config.task_description, p.dataset.train.size()});
    }
    return m;
}

void bind_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest) {
    if (std::filesystem::exists(run_dir / "manifest.json")) {
        const auto existing = read_manifest(run_dir);
        if (existing.config_digest != manifest.config_digest) {
            throw ConfigError("run directory " + run_dir.string() + " belongs to config " + existing.config_digest +
                              "; this config is " + manifest.config_digest + ". Use a different output directory.");
        }
        return;
    }
    write_manifest(run_dir, manifest);
}

EmbeddingCache open_cache(const ExperimentConfig& config, EmbeddingProvider& provider, const std::string& dataset) {
    return EmbeddingCache::open(config.output_dir / "embeddings" / (dataset + ".knne"), provider.id(), provider.dims());
}

struct CellContext {
    const ExperimentConfig& config;
    const Dataset& dataset;
    const std::string& task_description;
    const Index& index;
    const EmbeddingCache& cache;
    std::size_t k;
    ChatClient* llm;
    const LlmCallPolicy& policy;
    const PromptTemplate& prompt_template;
    bool annotate;
    bool router_uses_llm;
    RouteAuditLog& audit;
    std::string digest;
};

ModelOutcome run_model(const CellContext& cx, ModelKind model, const NeighborSet& ns, const Example& query) {
    ModelOutcome out;
    out.model = model;
    const auto t0 = Clock::now();
    try {
        switch (model) {
        case ModelKind::Knn:
        case ModelKind::WeightedKnn:
            out.label = knn_predict(ns, model == ModelKind::WeightedKnn).label;
            break;
        case ModelKind::Lr:
            out.label = lr_on_topk(ns, query.text, cx.config.lr).label;
            break;
        case ModelKind::Llm:
        case ModelKind::LlmWeighted:
        case ModelKind::LlmZeroShot: {
            if (!cx.llm) throw QueryFailed(query.id, "no LLM client configured");
            const PromptSpec prompt =
                model == ModelKind::LlmZeroShot
                    ? build_zero_shot_prompt(query, cx.dataset.label_space, cx.prompt_template)
                    : build_icl_prompt(ns, query, cx.dataset.label_space,
                                       model == ModelKind::Llm ? PromptMode::Plain : PromptMode::Weighted,
                                       cx.prompt_template);
            auto [pred, resp] = llm_predict_detailed(*cx.llm, prompt, cx.policy);
            out.label = pred.label;
            out.raw_response = resp.raw_text;
            break;
        }
        case ModelKind::Router:
            throw ContractError("router is handled separately");
        }
    } catch (const std::exception& e) {
        out.label.reset();
        out.error = e.what();
    }
    out.latency_ms = ms_since(t0);
    return out;
}

RunRecord process_query(const CellContext& cx, const Example& query) {
    const auto t0 = Clock::now();
    RunRecord rec;
    rec.config_digest = cx.digest;
    rec.dataset = cx.dataset.name;
    rec.k = cx.k;
    rec.query_id = query.id;
    rec.gold = query.label;

    const auto vec = cx.cache.get(query.id);
    if (!vec) throw std::runtime_error("query " + query.id + " has no embedding");
    NeighborSet ns = topk(cx.index, *vec, cx.k, query.id);
    rec.neighbor_digest = ns.digest();

    for (auto model : cx.config.models) {
        if (model == ModelKind::Router) continue;
        auto outcome = run_model(cx, model, ns, query);
        if (outcome.error) rec.failures.push_back(std::string(to_string(model)) + ": " + *outcome.error);
        rec.predictions.push_back(std::move(outcome));
    }

    std::string annotator;
    if (cx.annotate && cx.llm) {
        annotator = llm_annotator_id(*cx.llm);
        for (const auto& n : ns.neighbors) {
            try {
                rec.verdicts.push_back(llm_annotate_relevance(*cx.llm, query, n, cx.task_description, cx.policy));
            } catch (const std::exception& e) {
                rec.failures.push_back(std::string("annotation: ") + e.what());
            }
        }
    }

    if (cx.config.has_model(ModelKind::Router)) {
        RelevanceScore rel;
        RelevanceSource source = RelevanceSource::Proxy;
        if (cx.router_uses_llm && rec.verdicts.size() == ns.neighbors.size()) {
            rel = relevance_score(ns, rec.verdicts, annotator);
            source = RelevanceSource::LlmAnnotator;
        } else {
            rel = proxy_relevance(ns);
        }
        RouterOptions ro;
        ro.threshold = cx.config.router.threshold;
        ro.weighted_knn = cx.config.router.weighted_knn;
        ro.llm_policy = cx.policy;
        ro.prompt_template = cx.prompt_template;
        ModelOutcome out;
        out.model = ModelKind::Router;
        const auto tr = Clock::now();
        try {
            auto d = route(query, ns, rel, cx.dataset.label_space, cx.llm, ro, source, &cx.audit);
            out.label = d.prediction.label;
            rec.route = RouteInfo{std::string(to_string(d.route)), d.relevance, d.threshold,
                                  std::string(to_string(d.source))};
        } catch (const std::exception& e) {
            out.error = e.what();
            rec.failures.push_back(std::string("router: ") + e.what());
            rec.route = RouteInfo{"llm", rel.score, ro.threshold, std::string(to_string(source))};
        }
        out.latency_ms = ms_since(tr);
        // Keep predictions in configuration order.
        auto pos = std::find(cx.config.models.begin(), cx.config.models.end(), ModelKind::Router) - cx.config.models.begin();
        rec.predictions.insert(rec.predictions.begin() + std::min<std::ptrdiff_t>(pos, static_cast<std::ptrdiff_t>(rec.predictions.size())),
                               std::move(out));
    }

    for (auto& n : ns.neighbors) n.text.clear();
    rec.neighbors = std::move(ns);
    rec.elapsed_ms = ms_since(t0);
    return rec;
}

void log_line(const RunOptions& options, const std::string& line) {
    if (options.log) options.log(line);
}

} // namespace

std::map<std::string, EmbedStats> embed_datasets(const ExperimentConfig& config) {
    const auto prepared = prepare_datasets(config);
    auto provider = make_embedding_provider(config.embedding);
    std::map<std::string, EmbedStats> out;
    for (const auto& p : prepared) {
        auto cache = open_cache(config, *provider, p.dataset.name);
        out[p.dataset.name] = embed_corpus(*provider, sampled_view(p.dataset, p.sample), cache, config.embedding.options);
    }
    return out;
}

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    // Everything that can be wrong with the configuration is checked here,
    // before the first record is written.
    const auto prepared = prepare_datasets(config);
    PromptTemplate prompt_template;
    if (config.llm.template_path) {
        try {
            prompt_template = PromptTemplate::load(*config.llm.template_path);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("prompt template: ") + e.what());
        }
    }
    auto provider = make_embedding_provider(config.embedding);
    auto base_client = make_chat_client(config.llm);
    std::optional<GuardedClient> guarded;
    if (base_client) guarded.emplace(*base_client, config.llm.max_concurrency);
    std::optional<TokenBucket> bucket;
    LlmCallPolicy policy;
    policy.retry = config.llm.retry;
    if (config.llm.rate_per_second > 0.0) {
        bucket.emplace(config.llm.rate_per_second, std::max(1.0, config.llm.rate_per_second));
        policy.limiter = &*bucket;
    }
    const bool router_uses_llm = config.has_model(ModelKind::Router) && resolved_relevance_source(config) == "llm";
    const bool annotate = config.llm_annotates() || router_uses_llm;

    const auto& run_dir = config.output_dir;
    const auto manifest = make_manifest(config, prepared);
    bind_manifest(run_dir, manifest);

    RunSummary summary;
    summary.run_dir = run_dir;
    summary.config_digest = manifest.config_digest;
    for (const auto& p : prepared) summary.queries_total += p.sample.example_ids.size() * config.k_values.size();

    RouteAuditLog audit(run_dir / "audit" / "router.jsonl");
    std::atomic<std::size_t> claimed{0};
    bool stopped = false;

    for (const auto& p : prepared) {
        if (stopped) break;
        const Dataset view = sampled_view(p.dataset, p.sample);
        auto cache = open_cache(config, *provider, p.dataset.name);
        const auto stats = embed_corpus(*provider, view, cache, config.embedding.options);
        if (stats.embedded) {
            log_line(options, p.dataset.name + ": embedded " + std::to_string(stats.embedded) + " texts (" +
                                  std::to_string(stats.already_cached) + " cached)");
        }
        const Index index = Index::build(cache, p.dataset);

        for (auto k : config.k_values) {
            if (stopped) break;
            const auto path = cell_path(run_dir, p.dataset.name, k);
            std::filesystem::create_directories(path.parent_path());
            if (auto dropped = repair_jsonl(path)) {
                log_line(options, path.string() + ": dropped " + std::to_string(dropped) + " bytes of a torn record");
            }
            std::set<std::string> done;
            for (const auto& r : read_records(path, manifest.config_digest)) done.insert(r.query_id);
            std::vector<const Example*> pending;
            for (const auto& q : view.test) {
                if (!done.contains(q.id)) pending.push_back(&q);
            }
            summary.already_done += view.test.size() - pending.size();
            if (pending.empty()) continue;

            RecordWriter writer(path);
            CellContext cx{config,      view,     p.config.task_description, index, cache, k,
                           guarded ? &*guarded : nullptr, policy, prompt_template, annotate, router_uses_llm,
                           audit,       manifest.config_digest};
            std::atomic<std::size_t> next{0};
            std::atomic<bool> budget_hit{false};
            std::exception_ptr error;
            std::mutex error_mutex;

            auto worker = [&] {
                for (;;) {
                    if (options.stop_after && claimed.fetch_add(1) >= *options.stop_after) {
                        budget_hit = true;
                        return;
                    }
                    const auto i = next.fetch_add(1);
                    if (i >= pending.size()) {
                        if (options.stop_after) claimed.fetch_sub(1);
                        return;
                    }
                    try {
                        writer.append(process_query(cx, *pending[i]));
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                        return;
                    }
                }
            };
            const auto n_threads = std::min<std::size_t>(config.workers, pending.size());
            std::vector<std::jthread> pool;
            for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
            worker();
            pool.clear();
            if (error) std::rethrow_exception(error);

            summary.processed += writer.appended();
            log_line(options, p.dataset.name + " k=" + std::to_string(k) + ": " + std::to_string(writer.appended()) +
                                  " queries recorded");
            if (budget_hit) stopped = true;
        }
    }

    summary.complete = summary.already_done + summary.processed == summary.queries_total;
    if (guarded) summary.llm_calls = guarded->calls();

    for (const auto& p : prepared) {
        for (auto k : config.k_values) {
            for (const auto& r : read_records(cell_path(run_dir, p.dataset.name, k), manifest.config_digest)) {
                for (const auto& f : r.failures) {
                    summary.failures.push_back(p.dataset.name + "/k" + std::to_string(k) + "/" + r.query_id + ": " + f);
                }
            }
        }
    }
    std::sort(summary.failures.begin(), summary.failures.end());

    if (summary.complete && options.write_reports) {
        export_reports(run_dir, "all", ExportFormat::Csv);
        export_reports(run_dir, "all", ExportFormat::Jsonl);
    }
    return summary;
}

} // namespace knnicl
