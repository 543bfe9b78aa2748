#include "knnicl/service.hpp"

#include "knnicl/annotation.hpp"
#include "knnicl/errors.hpp"
#include "knnicl/harness.hpp"
#include "knnicl/hashing.hpp"
#include "knnicl/router.hpp"

#include <httplib.h>

#include <chrono>
#include <mutex>
#include <thread>

namespace knnicl {

using nlohmann::json;

namespace {

struct Retrieval {
    Dataset dataset;
    EmbeddingCache cache;
    Index index;
    std::string task_description;
};

json error_body(const std::string& message) { return json{{"error", message}}; }

} // namespace

struct Service::Impl {
    ExperimentConfig config;
    RunManifest manifest;
    AnnotationStore store;
    std::unique_ptr<EmbeddingProvider> provider;
    std::unique_ptr<ChatClient> client;
    RouteAuditLog audit;
    PromptTemplate prompt_template;

    std::mutex classify_mutex;
    std::map<std::string, std::unique_ptr<Retrieval>> retrieval;

    httplib::Server server;
    std::thread thread;

    explicit Impl(ExperimentConfig c)
        : config(std::move(c)),
          manifest(read_manifest(config.output_dir)),
          store(AnnotationStore::open(config.output_dir)),
          provider(make_embedding_provider(config.embedding)),
          client(make_chat_client(config.llm)),
          audit(config.output_dir / "audit" / "router.jsonl") {
        if (manifest.config_digest != config.digest()) {
            throw ConfigError("run directory " + config.output_dir.string() + " was produced by config " +
                              manifest.config_digest + ", not " + config.digest());
        }
        if (config.llm.template_path) prompt_template = PromptTemplate::load(*config.llm.template_path);
    }

    Retrieval& resources(const std::string& name) {
        auto it = retrieval.find(name);
        if (it != retrieval.end()) return *it->second;
        const DatasetConfig* dc = nullptr;
        for (const auto& d : config.datasets) {
            if (d.name == name) dc = &d;
        }
        if (!dc) throw ContractError("unknown dataset '" + name + "'");
        auto ds = materialize_dataset(*dc);
        auto cache = EmbeddingCache::open(config.output_dir / "embeddings" / (name + ".knne"), provider->id(),
                                          provider->dims());
        // Only the train split is needed for retrieval.
        embed_corpus(*provider, make_dataset(ds.name, ds.train, {}, ds.label_space), cache, config.embedding.options);
        auto index = Index::build(cache, ds);
        auto r = std::make_unique<Retrieval>(Retrieval{std::move(ds), std::move(cache), std::move(index), dc->task_description});
        return *retrieval.emplace(name, std::move(r)).first->second;
    }
};

Service::Service(ExperimentConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

std::pair<int, json> Service::handle_tasks(const std::string& annotator, std::size_t limit) {
    if (annotator.empty()) return {400, error_body("missing annotator parameter")};
    const auto id = human_annotator_id(annotator);
    const auto pending = impl_->store.pending(id);
    std::size_t total = 0, done = 0;
    for (const auto& p : impl_->store.progress()) {
        if (p.annotator_id == id) {
            total = p.total;
            done = p.done;
        }
    }
    json tasks = json::array();
    for (std::size_t i = 0; i < pending.size() && i < limit; ++i) tasks.push_back(to_json(pending[i]));
    return {200, json{{"annotator", id},
                      {"done", done},
                      {"total", total},
                      {"pending", pending.size()},
                      {"next", pending.empty() ? json(nullptr) : to_json(pending.front())},
                      {"tasks", tasks}}};
}

std::pair<int, json> Service::handle_judgment(const json& body) {
    if (!body.is_object() || !body.contains("task_id") || !body.at("task_id").is_string()) {
        return {400, error_body("body must be an object with a string task_id")};
    }
    if (!body.contains("relevant")) return {400, error_body("missing relevant")};
    const auto& rv = body.at("relevant");
    bool relevant;
    if (rv.is_boolean()) {
        relevant = rv.get<bool>();
    } else if (rv.is_number_integer() && (rv.get<int>() == 0 || rv.get<int>() == 1)) {
        relevant = rv.get<int>() == 1;
    } else {
        return {400, error_body("relevant must be a boolean, 0 or 1")};
    }
    std::string annotator;
    if (body.contains("annotator")) {
        if (!body.at("annotator").is_string()) return {400, error_body("annotator must be a string")};
        annotator = body.at("annotator").get<std::string>();
    }
    const auto task_id = body.at("task_id").get<std::string>();
    const auto r = impl_->store.submit(task_id, relevant, annotator);
    switch (r.status) {
    case SubmitStatus::Accepted:
        return {200, json{{"task_id", task_id}, {"status", "done"}, {"relevant", relevant}}};
    case SubmitStatus::AlreadyDone:
        return {409, json{{"task_id", task_id}, {"warning", r.message}}};
    case SubmitStatus::UnknownTask:
        return {404, error_body(r.message)};
    case SubmitStatus::WrongAnnotator:
        return {403, error_body(r.message)};
    }
    return {500, error_body("unreachable")};
}

std::pair<int, json> Service::handle_status() {
    json annotators = json::array();
    for (const auto& p : impl_->store.progress()) {
        annotators.push_back({{"annotator", p.annotator_id}, {"done", p.done}, {"total", p.total}});
    }
    struct Acc {
        std::size_t tasks = 0, judged = 0, relevant = 0;
    };
    std::map<std::tuple<std::string, std::size_t, std::string, std::string>, Acc> groups;
    for (const auto& t : impl_->store.tasks()) {
        auto& a = groups[{t.dataset, t.k, t.query_id, t.annotator_id}];
        ++a.tasks;
        if (t.status == TaskStatus::Done) {
            ++a.judged;
            if (*t.relevant) ++a.relevant;
        }
    }
    json relevance = json::array();
    for (const auto& [key, a] : groups) {
        const auto& [dataset, k, query, annotator] = key;
        json score = nullptr;
        if (a.judged == a.tasks) score = static_cast<double>(a.relevant) / static_cast<double>(a.tasks);
        relevance.push_back({{"dataset", dataset},
                             {"k", k},
                             {"query_id", query},
                             {"annotator", annotator},
                             {"judged", a.judged},
                             {"relevant", a.relevant},
                             {"relevance_score", score}});
    }
    json cells = json::array();
    for (const auto& d : impl_->manifest.datasets) {
        for (auto k : impl_->manifest.k_values) {
            const auto records = read_records(cell_path(impl_->config.output_dir, d.name, k));
            cells.push_back({{"dataset", d.name}, {"k", k}, {"records", records.size()}, {"expected", d.sample_ids.size()}});
        }
    }
    return {200, json{{"config_digest", impl_->manifest.config_digest},
                      {"cells", cells},
                      {"annotators", annotators},
                      {"relevance", relevance}}};
}

std::pair<int, json> Service::handle_classify(const json& body) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!body.is_object() || !body.contains("text") || !body.at("text").is_string()) {
        return {400, error_body("body must be an object with a string text")};
    }
    const auto text = body.at("text").get<std::string>();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return {400, error_body("text is empty")};
    std::size_t k = impl_->config.k_values.back();
    if (body.contains("k")) {
        if (!body.at("k").is_number_integer() || body.at("k").get<long long>() <= 0) {
            return {400, error_body("k must be a positive integer")};
        }
        k = body.at("k").get<std::size_t>();
    }
    double threshold = impl_->config.router.threshold;
    if (body.contains("threshold")) {
        if (!body.at("threshold").is_number() || body.at("threshold").get<double>() < 0.0) {
            return {400, error_body("threshold must be a non-negative number")};
        }
        threshold = body.at("threshold").get<double>();
    }
    std::string dataset = impl_->config.datasets.front().name;
    if (body.contains("dataset")) {
        if (!body.at("dataset").is_string()) return {400, error_body("dataset must be a string")};
        dataset = body.at("dataset").get<std::string>();
    }

    std::lock_guard lock(impl_->classify_mutex);
    Retrieval* res;
    try {
        res = &impl_->resources(dataset);
    } catch (const ContractError& e) {
        return {404, error_body(e.what())};
    }

    const Example query{"classify:" + hex64(fnv1a64(text)), text, {}};
    NeighborSet ns;
    try {
        ns = topk(res->index, embed_text(*impl_->provider, text), k, query.id);
    } catch (const std::exception& e) {
        return {502, error_body(std::string("embedding failed: ") + e.what())};
    }

    LlmCallPolicy policy;
    policy.retry = impl_->config.llm.retry;
    RelevanceScore rel = proxy_relevance(ns);
    RelevanceSource source = RelevanceSource::Proxy;
    if (impl_->client && resolved_relevance_source(impl_->config) == "llm") {
        try {
            std::vector<RelevanceVerdict> verdicts;
            for (const auto& n : ns.neighbors) {
                verdicts.push_back(llm_annotate_relevance(*impl_->client, query, n, res->task_description, policy));
            }
            rel = relevance_score(ns, verdicts, llm_annotator_id(*impl_->client));
            source = RelevanceSource::LlmAnnotator;
        } catch (const AnnotationFailed&) {
            // Falls back to the proxy score computed above.
        }
    }

    RouterOptions ro;
    ro.threshold = threshold;
    ro.weighted_knn = impl_->config.router.weighted_knn;
    ro.llm_policy = policy;
    ro.prompt_template = impl_->prompt_template;
    try {
        const auto d = route(query, ns, rel, res->dataset.label_space, impl_->client.get(), ro, source, &impl_->audit);
        const double latency = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return {200, json{{"label", d.prediction.label},
                          {"route", to_string(d.route)},
                          {"relevance", d.relevance},
                          {"relevance_source", to_string(d.source)},
                          {"threshold", d.threshold},
                          {"k", k},
                          {"latency", latency}}};
    } catch (const QueryFailed& e) {
        return {502, error_body(e.what())};
    } catch (const ContractError& e) {
        return {503, error_body(e.what())};
    }
}

int Service::start(const ServiceOptions& options) {
    auto& svr = impl_->server;
    auto reply = [](httplib::Response& res, const std::pair<int, json>& r) {
        res.status = r.first;
        res.set_content(r.second.dump(), "application/json");
    };
    auto parse = [](const httplib::Request& req, json& out) {
        try {
            out = json::parse(req.body);
            return true;
        } catch (const json::exception&) {
            return false;
        }
    };
    svr.Get("/tasks", [this, reply](const httplib::Request& req, httplib::Response& res) {
        std::size_t limit = 50;
        if (req.has_param("limit")) {
            try {
                limit = std::stoul(req.get_param_value("limit"));
            } catch (const std::exception&) {
                reply(res, {400, error_body("limit must be a non-negative integer")});
                return;
            }
        }
        reply(res, handle_tasks(req.get_param_value("annotator"), limit));
    });
    svr.Post("/judgments", [this, reply, parse](const httplib::Request& req, httplib::Response& res) {
        json body;
        if (!parse(req, body)) return reply(res, {400, error_body("malformed JSON")});
        reply(res, handle_judgment(body));
    });
    svr.Get("/status", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_status()); });
    svr.Post("/classify", [this, reply, parse](const httplib::Request& req, httplib::Response& res) {
        json body;
        if (!parse(req, body)) return reply(res, {400, error_body("malformed JSON")});
        reply(res, handle_classify(body));
    });
    if (!options.ui_dir.empty() && std::filesystem::is_directory(options.ui_dir)) {
        svr.set_mount_point("/", options.ui_dir.string());
    }
    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            if (ep) std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        res.status = 500;
        res.set_content(error_body(what).dump(), "application/json");
    });

    if (options.port == 0) {
        port_ = svr.bind_to_any_port(options.host);
    } else if (svr.bind_to_port(options.host, options.port)) {
        port_ = options.port;
    } else {
        port_ = -1;
    }
    if (port_ <= 0) throw std::runtime_error("cannot bind " + options.host + ":" + std::to_string(options.port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port_;
}

void Service::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

void Service::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

} // namespace knnicl
