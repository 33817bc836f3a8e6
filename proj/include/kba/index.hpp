#pragma once

#include "kba/corpus.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kba {

struct EmbeddingVector {
    std::vector<float> values;
    std::string model_id;

    std::size_t dim() const noexcept { return values.size(); }
};

/// Anything that maps texts to fixed-length vectors. Implementations return
/// raw vectors; embed() validates and normalizes them.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual std::string model_id() const = 0;
    virtual std::vector<std::vector<float>> embed_raw(std::span<const std::string> texts) = 0;
};

/// Feature hashing of lower-cased character trigrams and identifier tokens.
/// Deterministic and offline; the default provider for tests and the sample corpus.
class HashEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(std::size_t dim = 256);

    std::string model_id() const override;
    std::vector<std::vector<float>> embed_raw(std::span<const std::string> texts) override;

    std::size_t dim() const noexcept { return dim_; }

private:
    std::size_t dim_;
};

struct HttpProviderOptions {
    std::string base_url;          // e.g. https://api.openai.com/v1
    std::string model;
    std::string api_key_env;       // name of the env var holding the key; empty for none
    double timeout_seconds = 30.0;
    int max_attempts = 3;
    double backoff_seconds = 0.5;
};

/// OpenAI-style `POST {base}/embeddings` client.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(HttpProviderOptions options);

    std::string model_id() const override;
    std::vector<std::vector<float>> embed_raw(std::span<const std::string> texts) override;

private:
    HttpProviderOptions options_;
};

/// One normalized vector per text, all tagged with the provider's model id.
std::vector<EmbeddingVector> embed(std::span<const std::string> texts, EmbeddingProvider& provider);
EmbeddingVector embed_one(const std::string& text, EmbeddingProvider& provider);

void l2_normalize(std::vector<float>& v);

struct SearchHit {
    std::string chunk_id;
    double score = 0.0;

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Dense, immutable store of chunk vectors for one embedding model.
class VectorDatabase {
public:
    VectorDatabase() = default;
    VectorDatabase(std::string name, std::string model_id, std::size_t dim,
                   std::string fingerprint, std::int64_t build_time);

    void add(std::string chunk_id, const EmbeddingVector& vec);

    const std::string& name() const noexcept { return name_; }
    const std::string& model_id() const noexcept { return model_id_; }
    std::size_t dim() const noexcept { return dim_; }
    const std::string& fingerprint() const noexcept { return fingerprint_; }
    std::int64_t build_time() const noexcept { return build_time_; }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::vector<std::string>& chunk_ids() const noexcept { return ids_; }
    std::span<const float> row(std::size_t i) const {
        return {matrix_.data() + i * dim_, dim_};
    }

    /// Exact top-k by cosine similarity; ties go to the smaller chunk id.
    std::vector<SearchHit> search(const EmbeddingVector& query, std::size_t k) const;

    std::string serialize() const;
    static VectorDatabase deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static VectorDatabase load(const std::filesystem::path& path);

private:
    std::string name_;
    std::string model_id_;
    std::size_t dim_ = 0;
    std::string fingerprint_;
    std::int64_t build_time_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> matrix_;
};

/// Hash of chunk ids, spans and texts in order. Any corpus edit changes it.
std::string corpus_fingerprint(std::span<const DocumentChunk> chunks);

struct BuildOptions {
    std::string name = "docs";
    /// Unix seconds stored in the header. Fixed values give byte-identical rebuilds.
    std::int64_t build_time = 0;
    std::size_t batch_size = 64;
};

VectorDatabase build_database(std::span<const DocumentChunk> chunks, EmbeddingProvider& provider,
                              const BuildOptions& options);

/// Build time to stamp: SOURCE_DATE_EPOCH when set, otherwise now.
std::int64_t default_build_time();

} // namespace kba
