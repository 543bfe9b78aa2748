#pragma once

#include "knnicl/corpus.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace knnicl {

/// Dense sentence embedding; all values finite.
struct EmbeddingVector {
    std::vector<float> values;

    std::size_t dims() const noexcept { return values.size(); }
    std::span<const float> view() const noexcept { return values; }

    bool operator==(const EmbeddingVector&) const = default;
};

/// dot(a,b) / (|a| |b|), clamped to [-1, 1]. Throws ContractError on a dims
/// mismatch or an all-zero vector.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    /// Distinguishes checkpoints so caches from different models never mix.
    virtual std::string id() const = 0;
    virtual std::size_t dims() const = 0;

    /// One vector per input text, in input order.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) = 0;
};

/// Offline provider: each whitespace token is hashed (seeded) into one of
/// `dims` buckets, counts are accumulated and the result L2-normalized.
class MockEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit MockEmbeddingProvider(std::size_t dims, std::uint64_t seed = 0);

    std::string id() const override;
    std::size_t dims() const override { return dims_; }
    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override;

    /// The published bucket assignment for one token.
    static std::size_t bucket(std::string_view token, std::size_t dims, std::uint64_t seed);

    std::size_t texts_embedded() const noexcept { return texts_embedded_.load(); }
    std::size_t batch_calls() const noexcept { return batch_calls_.load(); }

private:
    std::size_t dims_;
    std::uint64_t seed_;
    std::atomic<std::size_t> texts_embedded_{0};
    std::atomic<std::size_t> batch_calls_{0};
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{200};
    std::chrono::milliseconds max_delay{10'000};
};

/// Sleeps before retry number `attempt` (1-based): base * 2^(attempt-1) with
/// full jitter, capped at max_delay.
void backoff_sleep(const RetryPolicy& policy, int attempt, std::uint64_t jitter_seed);

struct RemoteEmbeddingConfig {
    /// e.g. http://127.0.0.1:8080/embed
    std::string url;
    std::string provider_id;
    std::size_t dims = 0;
    /// Name of the environment variable holding the bearer token, if any.
    std::string token_env;
    RetryPolicy retry;
    std::chrono::seconds timeout{60};
};

/// Client for an embedding service: POST {"texts": [...]} returning
/// {"vectors": [[...], ...]}.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit RemoteEmbeddingProvider(RemoteEmbeddingConfig config);

    std::string id() const override { return config_.provider_id; }
    std::size_t dims() const override { return config_.dims; }
    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override;

private:
    RemoteEmbeddingConfig config_;
};

/// embed_text for a single string; checks the provider's declared dims.
EmbeddingVector embed_text(EmbeddingProvider& provider, const std::string& text);

/// Persistent (example_id -> vector) store for one provider. Format, all
/// integers little-endian:
///   header: "KNNE" u32 version, u32 len + provider_id bytes, u32 dims
///   blocks: u32 count, count * (u32 len + id bytes, dims * f32), u64 checksum
/// Each appended block is self-validating; a torn trailing block is dropped on
/// load, so an interrupted writer leaves a resumable file.
class EmbeddingCache {
public:
    static constexpr std::uint32_t kVersion = 1;

    /// Opens an existing cache or creates an empty one. Throws if the file was
    /// written by a different provider or with different dims.
    static EmbeddingCache open(const std::filesystem::path& path, std::string provider_id, std::size_t dims);

    /// In-memory cache, never persisted.
    static EmbeddingCache in_memory(std::string provider_id, std::size_t dims);

    EmbeddingCache(EmbeddingCache&&) noexcept;
    EmbeddingCache& operator=(EmbeddingCache&&) noexcept;
    ~EmbeddingCache();

    const std::string& provider_id() const noexcept { return provider_id_; }
    std::size_t dims() const noexcept { return dims_; }
    std::size_t size() const;
    bool contains(const std::string& example_id) const;
    std::optional<EmbeddingVector> get(const std::string& example_id) const;

    /// Appends one block atomically (file and memory). Existing ids are
    /// overwritten in memory; the last block wins on reload.
    void put_batch(const std::vector<std::pair<std::string, EmbeddingVector>>& entries);

    std::size_t dropped_bytes_on_load() const noexcept { return dropped_bytes_; }

private:
    EmbeddingCache() = default;

    std::optional<std::filesystem::path> path_;
    std::string provider_id_;
    std::size_t dims_ = 0;
    std::map<std::string, EmbeddingVector> entries_;
    std::size_t dropped_bytes_ = 0;
    std::unique_ptr<std::shared_mutex> mutex_ = std::make_unique<std::shared_mutex>();
};

struct EmbedOptions {
    std::size_t batch_size = 32;
    /// Upper bound on concurrent provider calls.
    std::size_t workers = 4;
};

struct EmbedStats {
    std::size_t already_cached = 0;
    std::size_t embedded = 0;
};

/// Ensures every train and test example has a cache entry; embeds only the
/// missing ones, in example order, one cache block per batch.
EmbedStats embed_corpus(EmbeddingProvider& provider, const Dataset& dataset, EmbeddingCache& cache,
                        const EmbedOptions& options = {});

} // namespace knnicl
