#include "knnicl/embedding.hpp"

#include "knnicl/errors.hpp"
#include "knnicl/hashing.hpp"
#include "knnicl/kernels.hpp"
#include "knnicl/net.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <mutex>
#include <random>
#include <thread>

namespace knnicl {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'K', 'N', 'N', 'E'};

bool is_zero(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}

void check_finite(const EmbeddingVector& v) {
    for (float x : v.values)
        if (!std::isfinite(x)) throw ContractError("embedding contains a non-finite value");
}

// Little-endian encoding, independent of host byte order.
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    bool has(std::size_t n) const { return pos_ + n <= data_.size(); }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }

    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string_view bytes(std::size_t n) {
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string encode_header(const std::string& provider_id, std::size_t dims) {
    std::string out(kMagic, 4);
    put_u32(out, EmbeddingCache::kVersion);
    put_u32(out, static_cast<std::uint32_t>(provider_id.size()));
    out += provider_id;
    put_u32(out, static_cast<std::uint32_t>(dims));
    return out;
}

std::string encode_block(const std::vector<std::pair<std::string, EmbeddingVector>>& entries) {
    std::string out;
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [id, vec] : entries) {
        put_u32(out, static_cast<std::uint32_t>(id.size()));
        out += id;
        for (float f : vec.values) put_f32(out, f);
    }
    put_u64(out, fnv1a64(out));
    return out;
}

} // namespace

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dims() != b.dims()) {
        throw ContractError("cosine_similarity: dims mismatch (" + std::to_string(a.dims()) + " vs " +
                            std::to_string(b.dims()) + ")");
    }
    if (a.dims() == 0 || is_zero(a.view()) || is_zero(b.view())) {
        throw ContractError("cosine_similarity: zero vector");
    }
    return kernels::cosine_from_parts(kernels::dot(a.view(), b.view()), kernels::norm(a.view()),
                                      kernels::norm(b.view()));
}

MockEmbeddingProvider::MockEmbeddingProvider(std::size_t dims, std::uint64_t seed) : dims_(dims), seed_(seed) {
    if (dims == 0) throw ContractError("mock provider needs dims > 0");
}

std::string MockEmbeddingProvider::id() const {
    return "mock-hash/d" + std::to_string(dims_) + "/s" + std::to_string(seed_);
}

std::size_t MockEmbeddingProvider::bucket(std::string_view token, std::size_t dims, std::uint64_t seed) {
    return static_cast<std::size_t>(mix64(fnv1a64(token) ^ mix64(seed)) % dims);
}

std::vector<EmbeddingVector> MockEmbeddingProvider::embed_batch(std::span<const std::string> texts) {
    ++batch_calls_;
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        ++texts_embedded_;
        std::vector<double> counts(dims_, 0.0);
        std::size_t i = 0;
        bool any = false;
        while (i < text.size()) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j > i) {
                counts[bucket(std::string_view(text).substr(i, j - i), dims_, seed_)] += 1.0;
                any = true;
            }
            i = j;
        }
        if (!any) throw ContractError("mock provider: text has no tokens");
        double norm = 0.0;
        for (double c : counts) norm += c * c;
        norm = std::sqrt(norm);
        EmbeddingVector v;
        v.values.reserve(dims_);
        for (double c : counts) v.values.push_back(static_cast<float>(c / norm));
        out.push_back(std::move(v));
    }
    return out;
}

void backoff_sleep(const RetryPolicy& policy, int attempt, std::uint64_t jitter_seed) {
    if (policy.base_delay.count() <= 0) return;
    const auto shift = std::min(attempt - 1, 20);
    const auto cap = std::min<std::int64_t>(policy.max_delay.count(), policy.base_delay.count() << shift);
    const double u = unit_interval(mix64(jitter_seed + static_cast<std::uint64_t>(attempt)));
    std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<std::int64_t>(u * static_cast<double>(cap))));
}

RemoteEmbeddingProvider::RemoteEmbeddingProvider(RemoteEmbeddingConfig config) : config_(std::move(config)) {
    if (config_.dims == 0) throw ConfigError("remote embedding provider needs declared dims");
    if (config_.provider_id.empty()) throw ConfigError("remote embedding provider needs a provider_id");
}

std::vector<EmbeddingVector> RemoteEmbeddingProvider::embed_batch(std::span<const std::string> texts) {
    const std::string body = json{{"texts", std::vector<std::string>(texts.begin(), texts.end())}}.dump();
    const std::string token = net::env_or_empty(config_.token_env);
    std::string last_error;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        try {
            auto res = net::post_json(config_.url, body, token, config_.timeout);
            if (res.status == 429 || res.status >= 500) {
                last_error = "HTTP " + std::to_string(res.status);
            } else if (res.status != 200) {
                throw TransportError("embedding service returned HTTP " + std::to_string(res.status) + ": " + res.body,
                                     attempt);
            } else {
                auto j = json::parse(res.body);
                const auto& rows = j.at("vectors");
                if (rows.size() != texts.size()) {
                    throw ContractError("embedding service returned " + std::to_string(rows.size()) +
                                        " vectors for " + std::to_string(texts.size()) + " texts");
                }
                std::vector<EmbeddingVector> out;
                out.reserve(rows.size());
                for (const auto& row : rows) {
                    EmbeddingVector v{row.get<std::vector<float>>()};
                    if (v.dims() != config_.dims) {
                        throw ContractError("embedding service returned dims " + std::to_string(v.dims()) +
                                            ", declared " + std::to_string(config_.dims));
                    }
                    check_finite(v);
                    out.push_back(std::move(v));
                }
                return out;
            }
        } catch (const json::exception& e) {
            throw ContractError(std::string("malformed embedding response: ") + e.what());
        } catch (const std::runtime_error& e) {
            if (dynamic_cast<const TransportError*>(&e)) throw;
            last_error = e.what();
        }
        if (attempt < config_.retry.max_attempts) backoff_sleep(config_.retry, attempt, fnv1a64(body));
    }
    throw TransportError("embedding request failed: " + last_error, config_.retry.max_attempts);
}

EmbeddingVector embed_text(EmbeddingProvider& provider, const std::string& text) {
    if (text.empty()) throw ContractError("embed_text: empty text");
    std::string one[1] = {text};
    auto out = provider.embed_batch(one);
    if (out.size() != 1) throw ContractError("provider returned " + std::to_string(out.size()) + " vectors for 1 text");
    if (out[0].dims() != provider.dims()) {
        throw ContractError("provider returned dims " + std::to_string(out[0].dims()) + ", declared " +
                            std::to_string(provider.dims()));
    }
    check_finite(out[0]);
    return std::move(out[0]);
}

EmbeddingCache::EmbeddingCache(EmbeddingCache&&) noexcept = default;
EmbeddingCache& EmbeddingCache::operator=(EmbeddingCache&&) noexcept = default;
EmbeddingCache::~EmbeddingCache() = default;

EmbeddingCache EmbeddingCache::in_memory(std::string provider_id, std::size_t dims) {
    EmbeddingCache c;
    c.provider_id_ = std::move(provider_id);
    c.dims_ = dims;
    return c;
}

EmbeddingCache EmbeddingCache::open(const std::filesystem::path& path, std::string provider_id, std::size_t dims) {
    EmbeddingCache c = in_memory(std::move(provider_id), dims);
    c.path_ = path;
    if (!std::filesystem::exists(path)) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << encode_header(c.provider_id_, dims);
        if (!out) throw std::runtime_error("cannot create embedding cache " + path.string());
        return c;
    }

    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r(data);
    if (!r.has(12) || std::memcmp(data.data(), kMagic, 4) != 0) {
        throw std::runtime_error(path.string() + ": not an embedding cache");
    }
    r.bytes(4);
    if (auto v = r.u32(); v != kVersion) {
        throw std::runtime_error(path.string() + ": unsupported cache version " + std::to_string(v));
    }
    const auto id_len = r.u32();
    if (!r.has(id_len + 4)) throw std::runtime_error(path.string() + ": truncated header");
    const std::string stored_id(r.bytes(id_len));
    const auto stored_dims = r.u32();
    if (stored_id != c.provider_id_ || stored_dims != dims) {
        throw ContractError(path.string() + ": cache belongs to provider '" + stored_id + "' dims " +
                            std::to_string(stored_dims) + ", requested '" + c.provider_id_ + "' dims " +
                            std::to_string(dims));
    }

    std::size_t good_end = r.pos();
    while (!r.done()) {
        const std::size_t start = r.pos();
        std::vector<std::pair<std::string, EmbeddingVector>> block;
        bool ok = r.has(4);
        if (ok) {
            const auto count = r.u32();
            for (std::uint32_t i = 0; ok && i < count; ++i) {
                if (!r.has(4)) { ok = false; break; }
                const auto len = r.u32();
                if (!r.has(len + 4 * dims)) { ok = false; break; }
                std::string id(r.bytes(len));
                EmbeddingVector v;
                v.values.resize(dims);
                for (auto& f : v.values) f = r.f32();
                block.emplace_back(std::move(id), std::move(v));
            }
            if (ok && r.has(8)) {
                const auto end = r.pos();
                const auto checksum = r.u64();
                ok = checksum == fnv1a64(std::string_view(data).substr(start, end - start));
            } else {
                ok = false;
            }
        }
        if (!ok) break;
        for (auto& [id, v] : block) c.entries_[id] = std::move(v);
        good_end = r.pos();
    }
    c.dropped_bytes_ = data.size() - good_end;
    if (c.dropped_bytes_ > 0) std::filesystem::resize_file(path, good_end);
    return c;
}

std::size_t EmbeddingCache::size() const {
    std::shared_lock lock(*mutex_);
    return entries_.size();
}

bool EmbeddingCache::contains(const std::string& example_id) const {
    std::shared_lock lock(*mutex_);
    return entries_.contains(example_id);
}

std::optional<EmbeddingVector> EmbeddingCache::get(const std::string& example_id) const {
    std::shared_lock lock(*mutex_);
    auto it = entries_.find(example_id);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void EmbeddingCache::put_batch(const std::vector<std::pair<std::string, EmbeddingVector>>& entries) {
    for (const auto& [id, v] : entries) {
        if (v.dims() != dims_) {
            throw ContractError("cache entry '" + id + "' has dims " + std::to_string(v.dims()) + ", cache dims " +
                                std::to_string(dims_));
        }
        check_finite(v);
    }
    std::unique_lock lock(*mutex_);
    if (path_) {
        std::ofstream out(*path_, std::ios::binary | std::ios::app);
        const auto block = encode_block(entries);
        out.write(block.data(), static_cast<std::streamsize>(block.size()));
        out.flush();
        if (!out) throw std::runtime_error("failed writing embedding cache " + path_->string());
    }
    for (const auto& [id, v] : entries) entries_[id] = v;
}

EmbedStats embed_corpus(EmbeddingProvider& provider, const Dataset& dataset, EmbeddingCache& cache,
                        const EmbedOptions& options) {
    if (cache.dims() != provider.dims() || cache.provider_id() != provider.id()) {
        throw ContractError("cache provider/dims do not match the embedding provider");
    }
    const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
    const std::size_t workers = std::max<std::size_t>(1, options.workers);

    EmbedStats stats;
    std::vector<const Example*> missing;
    for (const auto* split : {&dataset.train, &dataset.test}) {
        for (const auto& e : *split) {
            if (cache.contains(e.id)) ++stats.already_cached;
            else missing.push_back(&e);
        }
    }

    std::vector<std::vector<const Example*>> batches;
    for (std::size_t i = 0; i < missing.size(); i += batch_size) {
        batches.emplace_back(missing.begin() + static_cast<std::ptrdiff_t>(i),
                             missing.begin() + static_cast<std::ptrdiff_t>(std::min(missing.size(), i + batch_size)));
    }

    auto run_batch = [&provider](const std::vector<const Example*>& batch) {
        std::vector<std::string> texts;
        for (const auto* e : batch) texts.push_back(e->text);
        auto vectors = provider.embed_batch(texts);
        if (vectors.size() != batch.size()) throw ContractError("provider returned a short batch");
        std::vector<std::pair<std::string, EmbeddingVector>> out;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (vectors[i].dims() != provider.dims()) throw ContractError("provider returned wrong dims");
            out.emplace_back(batch[i]->id, std::move(vectors[i]));
        }
        return out;
    };

    // Waves of up to `workers` concurrent batches; results are committed in
    // example order so a rerun after a failure resumes at the first gap.
    for (std::size_t wave = 0; wave < batches.size(); wave += workers) {
        const std::size_t end = std::min(batches.size(), wave + workers);
        std::vector<std::future<std::vector<std::pair<std::string, EmbeddingVector>>>> futures;
        for (std::size_t b = wave; b < end; ++b) {
            futures.push_back(std::async(workers == 1 ? std::launch::deferred : std::launch::async, run_batch,
                                         std::cref(batches[b])));
        }
        for (auto& f : futures) {
            auto entries = f.get();
            cache.put_batch(entries);
            stats.embedded += entries.size();
        }
    }
    return stats;
}

} // namespace knnicl
