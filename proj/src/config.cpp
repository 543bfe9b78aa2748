#include "knnicl/config.hpp"

#include "knnicl/errors.hpp"
#include "knnicl/hashing.hpp"
#include "knnicl/mock_llm.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace knnicl {

namespace {

using nlohmann::json;

const std::set<std::string> kSecretKeys = {"token", "api_key", "apikey", "password", "secret", "authorization", "key"};

void reject_inline_secrets(const json& j, const std::string& where) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) {
            std::string lower = k;
            std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
            if (kSecretKeys.contains(lower)) {
                throw ConfigError(where + "." + k +
                                  ": credentials must be referenced by environment variable name (use token_env)");
            }
            reject_inline_secrets(v, where + "." + k);
        }
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) reject_inline_secrets(j[i], where + "[" + std::to_string(i) + "]");
    }
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
            throw ConfigError(where + ": unknown key '" + k + "'");
        }
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) return base / path;
    return path;
}

DatasetConfig parse_dataset(const json& j, const std::filesystem::path& base, std::size_t index) {
    const std::string where = "datasets[" + std::to_string(index) + "]";
    check_keys(j, {"name", "train", "test", "format", "labels", "synthetic", "task_description"}, where);
    DatasetConfig d;
    d.name = get_or<std::string>(j, "name", "", where);
    if (d.name.empty()) throw ConfigError(where + ": name is required");
    if (d.name.find_first_of("/\\") != std::string::npos) throw ConfigError(where + ": name may not contain slashes");
    d.task_description = get_or<std::string>(j, "task_description", "classify the text of dataset " + d.name, where);
    if (j.contains("synthetic")) {
        if (j.contains("train") || j.contains("test")) throw ConfigError(where + ": synthetic and file sources are exclusive");
        const auto& s = j.at("synthetic");
        const std::string sw = where + ".synthetic";
        check_keys(s, {"labels", "n_train", "n_test", "tokens_per_text", "class_vocab", "shared_vocab", "purity", "seed"}, sw);
        SyntheticSpec spec;
        spec.name = d.name;
        spec.labels = get_or(s, "labels", spec.labels, sw);
        spec.n_train = get_or(s, "n_train", spec.n_train, sw);
        spec.n_test = get_or(s, "n_test", spec.n_test, sw);
        spec.tokens_per_text = get_or(s, "tokens_per_text", spec.tokens_per_text, sw);
        spec.class_vocab = get_or(s, "class_vocab", spec.class_vocab, sw);
        spec.shared_vocab = get_or(s, "shared_vocab", spec.shared_vocab, sw);
        spec.purity = get_or(s, "purity", spec.purity, sw);
        spec.seed = get_or(s, "seed", spec.seed, sw);
        if (spec.purity < 0.0 || spec.purity > 1.0) throw ConfigError(sw + ".purity must lie in [0, 1]");
        if (spec.n_train == 0 || spec.n_test == 0 || spec.tokens_per_text == 0 || spec.class_vocab == 0 ||
            spec.shared_vocab == 0) {
            throw ConfigError(sw + ": sizes must be positive");
        }
        d.synthetic = spec;
    } else {
        DatasetSource src;
        src.name = d.name;
        auto train = get_or<std::string>(j, "train", "", where);
        auto test = get_or<std::string>(j, "test", "", where);
        if (train.empty() || test.empty()) throw ConfigError(where + ": train and test paths are required");
        src.train_path = resolve(base, train);
        src.test_path = resolve(base, test);
        src.format = parse_record_format(get_or<std::string>(j, "format", "jsonl", where));
        if (j.contains("labels")) src.label_manifest = get_or<std::vector<std::string>>(j, "labels", {}, where);
        d.source = std::move(src);
    }
    return d;
}

} // namespace

nlohmann::json config_to_json(const ExperimentConfig& c) {
    json datasets = json::array();
    for (const auto& d : c.datasets) {
        json dj = {{"name", d.name}, {"task_description", d.task_description}};
        if (d.synthetic) {
            const auto& s = *d.synthetic;
            dj["synthetic"] = {{"labels", s.labels},       {"n_train", s.n_train},         {"n_test", s.n_test},
                               {"tokens_per_text", s.tokens_per_text}, {"class_vocab", s.class_vocab},
                               {"shared_vocab", s.shared_vocab}, {"purity", s.purity},     {"seed", s.seed}};
        } else {
            dj["train"] = d.source->train_path.generic_string();
            dj["test"] = d.source->test_path.generic_string();
            dj["format"] = to_string(d.source->format);
            if (d.source->label_manifest) dj["labels"] = *d.source->label_manifest;
        }
        datasets.push_back(std::move(dj));
    }
    json models = json::array();
    for (auto m : c.models) models.push_back(to_string(m));
    json j = {
        {"datasets", datasets},
        {"sample", {{"n", c.sample_n}, {"seed", c.sample_seed}}},
        {"k_values", c.k_values},
        {"models", models},
        {"relevance", {{"annotators", c.relevance_annotators}}},
        {"embedding",
         {{"provider", c.embedding.provider},
          {"dims", c.embedding.dims},
          {"seed", c.embedding.seed},
          {"url", c.embedding.remote.url},
          {"provider_id", c.embedding.remote.provider_id}}},
        {"llm",
         {{"provider", c.llm.provider},
          {"model", c.llm.model},
          {"script", c.llm.script},
          {"fixed_reply", c.llm.fixed_reply},
          {"overlap_threshold", c.llm.overlap_threshold},
          {"seed", c.llm.seed},
          {"prior_label", c.llm.prior_label ? json(*c.llm.prior_label) : json(nullptr)},
          {"url", c.llm.url},
          {"template", c.llm.template_path ? json(c.llm.template_path->generic_string()) : json(nullptr)}}},
        {"router",
         {{"threshold", c.router.threshold},
          {"knn_mode", c.router.weighted_knn ? "weighted" : "unweighted"},
          {"relevance_source", c.router.relevance_source}}},
        {"lr", {{"l2", c.lr.l2}, {"max_iters", c.lr.max_iters}, {"tol", c.lr.tol}}},
    };
    return j;
}

bool ExperimentConfig::has_model(ModelKind m) const { return std::find(models.begin(), models.end(), m) != models.end(); }

bool ExperimentConfig::needs_llm() const {
    return has_model(ModelKind::Llm) || has_model(ModelKind::LlmWeighted) || has_model(ModelKind::LlmZeroShot) ||
           llm_annotates() || (has_model(ModelKind::Router) && router.threshold > 0.0);
}

bool ExperimentConfig::llm_annotates() const {
    return std::find(relevance_annotators.begin(), relevance_annotators.end(), "llm") != relevance_annotators.end();
}

std::string ExperimentConfig::digest() const { return hex64(fnv1a64(config_to_json(*this).dump())); }

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
    reject_inline_secrets(doc, "config");
    check_keys(doc,
               {"schema", "datasets", "sample", "k_values", "models", "relevance", "embedding", "llm", "router", "lr",
                "workers", "output_dir"},
               "config");
    ExperimentConfig c;
    c.document = doc;

    if (!doc.contains("datasets") || !doc.at("datasets").is_array() || doc.at("datasets").empty()) {
        throw ConfigError("config.datasets must be a non-empty array");
    }
    std::set<std::string> names;
    for (std::size_t i = 0; i < doc.at("datasets").size(); ++i) {
        auto d = parse_dataset(doc.at("datasets")[i], base_dir, i);
        if (!names.insert(d.name).second) throw ConfigError("duplicate dataset name '" + d.name + "'");
        c.datasets.push_back(std::move(d));
    }

    if (doc.contains("sample")) {
        const auto& s = doc.at("sample");
        check_keys(s, {"n", "seed"}, "config.sample");
        c.sample_n = get_or(s, "n", c.sample_n, "config.sample");
        c.sample_seed = get_or(s, "seed", c.sample_seed, "config.sample");
        if (c.sample_n == 0) throw ConfigError("config.sample.n must be positive");
    }

    c.k_values = get_or(doc, "k_values", c.k_values, "config");
    if (c.k_values.empty()) throw ConfigError("config.k_values must not be empty");
    for (std::size_t i = 0; i < c.k_values.size(); ++i) {
        if (c.k_values[i] == 0) throw ConfigError("config.k_values must be positive");
        if (i && c.k_values[i] <= c.k_values[i - 1]) throw ConfigError("config.k_values must be strictly ascending");
    }

    if (doc.contains("models")) {
        c.models.clear();
        for (const auto& m : get_or<std::vector<std::string>>(doc, "models", {}, "config")) {
            auto kind = parse_model_kind(m);
            if (!c.has_model(kind)) c.models.push_back(kind);
        }
    }
    if (c.models.empty()) throw ConfigError("config.models must name at least one predictor");

    if (doc.contains("relevance")) {
        const auto& r = doc.at("relevance");
        check_keys(r, {"annotators"}, "config.relevance");
        c.relevance_annotators = get_or<std::vector<std::string>>(r, "annotators", {}, "config.relevance");
        for (const auto& a : c.relevance_annotators) {
            if (a != "llm") throw ConfigError("config.relevance.annotators: unknown annotator '" + a + "'");
        }
    }

    if (doc.contains("embedding")) {
        const auto& e = doc.at("embedding");
        const std::string w = "config.embedding";
        check_keys(e, {"provider", "dims", "seed", "url", "provider_id", "token_env", "batch_size", "workers",
                       "max_attempts", "backoff_ms"}, w);
        c.embedding.provider = get_or<std::string>(e, "provider", c.embedding.provider, w);
        c.embedding.dims = get_or(e, "dims", c.embedding.dims, w);
        c.embedding.seed = get_or(e, "seed", c.embedding.seed, w);
        c.embedding.remote.url = get_or<std::string>(e, "url", "", w);
        c.embedding.remote.provider_id = get_or<std::string>(e, "provider_id", "", w);
        c.embedding.remote.token_env = get_or<std::string>(e, "token_env", "", w);
        c.embedding.remote.dims = c.embedding.dims;
        c.embedding.remote.retry.max_attempts = get_or(e, "max_attempts", 5, w);
        c.embedding.remote.retry.base_delay = std::chrono::milliseconds(get_or(e, "backoff_ms", 200, w));
        c.embedding.options.batch_size = get_or(e, "batch_size", c.embedding.options.batch_size, w);
        c.embedding.options.workers = get_or(e, "workers", c.embedding.options.workers, w);
    }
    if (c.embedding.provider != "mock" && c.embedding.provider != "remote") {
        throw ConfigError("config.embedding.provider must be mock or remote");
    }
    if (c.embedding.dims == 0) throw ConfigError("config.embedding.dims must be positive");
    if (c.embedding.provider == "remote" && (c.embedding.remote.url.empty() || c.embedding.remote.provider_id.empty())) {
        throw ConfigError("config.embedding: remote provider needs url and provider_id");
    }

    if (doc.contains("llm")) {
        const auto& l = doc.at("llm");
        const std::string w = "config.llm";
        check_keys(l, {"provider", "model", "script", "fixed_reply", "overlap_threshold", "seed", "prior_label", "url",
                       "token_env", "template", "max_concurrency", "rate_per_second", "max_attempts", "backoff_ms"}, w);
        c.llm.provider = get_or<std::string>(l, "provider", c.llm.provider, w);
        c.llm.model = get_or<std::string>(l, "model", c.llm.model, w);
        c.llm.script = get_or<std::string>(l, "script", c.llm.script, w);
        c.llm.fixed_reply = get_or<std::string>(l, "fixed_reply", "", w);
        c.llm.overlap_threshold = get_or(l, "overlap_threshold", c.llm.overlap_threshold, w);
        c.llm.seed = get_or(l, "seed", c.llm.seed, w);
        if (l.contains("prior_label") && !l.at("prior_label").is_null()) {
            c.llm.prior_label = get_or<std::string>(l, "prior_label", "", w);
        }
        c.llm.url = get_or<std::string>(l, "url", "", w);
        c.llm.token_env = get_or<std::string>(l, "token_env", "", w);
        if (l.contains("template")) c.llm.template_path = resolve(base_dir, get_or<std::string>(l, "template", "", w));
        c.llm.max_concurrency = get_or(l, "max_concurrency", c.llm.max_concurrency, w);
        c.llm.rate_per_second = get_or(l, "rate_per_second", c.llm.rate_per_second, w);
        c.llm.retry.max_attempts = get_or(l, "max_attempts", 5, w);
        c.llm.retry.base_delay = std::chrono::milliseconds(get_or(l, "backoff_ms", 500, w));
    }
    if (c.llm.provider != "none" && c.llm.provider != "mock" && c.llm.provider != "http") {
        throw ConfigError("config.llm.provider must be none, mock or http");
    }
    if (c.llm.provider == "mock" && c.llm.script != "majority_echo" && c.llm.script != "relevance_following" &&
        c.llm.script != "fixed") {
        throw ConfigError("config.llm.script must be majority_echo, relevance_following or fixed");
    }
    if (c.llm.provider == "http" && c.llm.url.empty()) throw ConfigError("config.llm: http provider needs url");

    if (doc.contains("router")) {
        const auto& r = doc.at("router");
        const std::string w = "config.router";
        check_keys(r, {"threshold", "knn_mode", "relevance_source"}, w);
        c.router.threshold = get_or(r, "threshold", c.router.threshold, w);
        const auto mode = get_or<std::string>(r, "knn_mode", "unweighted", w);
        if (mode != "weighted" && mode != "unweighted") throw ConfigError(w + ".knn_mode must be weighted or unweighted");
        c.router.weighted_knn = mode == "weighted";
        c.router.relevance_source = get_or<std::string>(r, "relevance_source", c.router.relevance_source, w);
        if (c.router.relevance_source != "auto" && c.router.relevance_source != "llm" &&
            c.router.relevance_source != "proxy") {
            throw ConfigError(w + ".relevance_source must be auto, llm or proxy");
        }
        if (c.router.threshold < 0.0) throw ConfigError(w + ".threshold must be >= 0");
    }

    if (doc.contains("lr")) {
        const auto& l = doc.at("lr");
        check_keys(l, {"l2", "max_iters", "tol"}, "config.lr");
        c.lr.l2 = get_or(l, "l2", c.lr.l2, "config.lr");
        c.lr.max_iters = get_or(l, "max_iters", c.lr.max_iters, "config.lr");
        c.lr.tol = get_or(l, "tol", c.lr.tol, "config.lr");
        if (c.lr.l2 < 0.0) throw ConfigError("config.lr.l2 must be >= 0");
    }

    c.workers = get_or(doc, "workers", c.workers, "config");
    if (c.workers == 0) throw ConfigError("config.workers must be >= 1");
    c.output_dir = resolve(base_dir, get_or<std::string>(doc, "output_dir", c.output_dir.string(), "config"));

    if (c.needs_llm() && c.llm.provider == "none") {
        throw ConfigError("configured LLM predictors or annotators need config.llm.provider (mock or http)");
    }
    if (c.router.relevance_source == "llm" && c.llm.provider == "none") {
        throw ConfigError("router.relevance_source = llm needs an LLM client");
    }
    return c;
}

std::string resolved_relevance_source(const ExperimentConfig& config) {
    if (config.router.relevance_source == "auto") return config.llm.provider == "none" ? "proxy" : "llm";
    return config.router.relevance_source;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const EmbeddingConfig& config) {
    if (config.provider == "mock") return std::make_unique<MockEmbeddingProvider>(config.dims, config.seed);
    return std::make_unique<RemoteEmbeddingProvider>(config.remote);
}

std::unique_ptr<ChatClient> make_chat_client(const LlmConfig& config) {
    if (config.provider == "none") return nullptr;
    if (config.provider == "http") {
        return std::make_unique<HttpChatClient>(HttpChatConfig{config.url, config.model, config.token_env});
    }
    mock::Script classifier;
    if (config.script == "relevance_following") {
        classifier = mock::relevance_following({config.overlap_threshold, config.seed, config.prior_label});
    } else if (config.script == "fixed") {
        classifier = mock::fixed(config.fixed_reply);
    } else {
        classifier = mock::majority_echo();
    }
    return std::make_unique<ScriptedChatClient>(
        config.model, mock::combined(std::move(classifier), mock::overlap_annotator(config.overlap_threshold)));
}

Dataset materialize_dataset(const DatasetConfig& config) {
    if (config.synthetic) return make_synthetic_dataset(*config.synthetic);
    return load_dataset(*config.source);
}

} // namespace knnicl
