#include "kba/index.hpp"

#include "http_client.hpp"
#include "kba/error.hpp"
#include "kba/util.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <optional>
#include <fcntl.h>
#include <numeric>
#include <sys/file.h>
#include <unistd.h>

namespace kba {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = 1469598103934665603ULL ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    // final avalanche so nearby grams spread across buckets
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

bool is_ident(unsigned char c) { return std::isalnum(c) || c == '_'; }

} // namespace

HashEmbeddingProvider::HashEmbeddingProvider(std::size_t dim) : dim_(dim) {
    if (dim == 0) {
        throw Error(Errc::invalid_config, "embedding dim must be positive");
    }
}

std::string HashEmbeddingProvider::model_id() const {
    return "local/hash-ngram-v1:" + std::to_string(dim_);
}

std::vector<std::vector<float>> HashEmbeddingProvider::embed_raw(std::span<const std::string> texts) {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        std::vector<float> v(dim_, 0.0f);
        const std::string padded = " " + to_lower_ascii(text) + " ";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
            v[fnv1a(std::string_view(padded).substr(i, 3), 0x9e37) % dim_] += 1.0f;
        }
        // identifier tokens get their own features so API names dominate
        std::size_t i = 0;
        while (i < padded.size()) {
            while (i < padded.size() && !is_ident(static_cast<unsigned char>(padded[i]))) ++i;
            std::size_t j = i;
            while (j < padded.size() && is_ident(static_cast<unsigned char>(padded[j]))) ++j;
            if (j > i) {
                v[fnv1a(std::string_view(padded).substr(i, j - i), 0x7f4a) % dim_] += 2.0f;
            }
            i = j;
        }
        out.push_back(std::move(v));
    }
    return out;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpProviderOptions options)
    : options_(std::move(options)) {
    if (options_.base_url.empty() || options_.model.empty()) {
        throw Error(Errc::invalid_config, "http embedding provider needs base_url and model");
    }
}

std::string HttpEmbeddingProvider::model_id() const { return options_.model; }

std::vector<std::vector<float>> HttpEmbeddingProvider::embed_raw(std::span<const std::string> texts) {
    json req{{"model", options_.model}, {"input", json(std::vector<std::string>(texts.begin(), texts.end()))}};
    detail::HttpRequestOptions opts;
    opts.timeout_seconds = options_.timeout_seconds;
    opts.max_attempts = options_.max_attempts;
    opts.backoff_seconds = options_.backoff_seconds;
    opts.bearer_env = options_.api_key_env;
    auto res = detail::post_json(options_.base_url, "/embeddings", req, opts);

    try {
        const auto& data = res.at("data");
        std::vector<std::vector<float>> out(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::size_t slot = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
            if (slot >= out.size()) {
                throw ProviderError(Errc::provider_contract_violation, "embedding index out of range");
            }
            out[slot] = data[i].at("embedding").get<std::vector<float>>();
        }
        return out;
    } catch (const json::exception& e) {
        throw ProviderError(Errc::provider_contract_violation,
                            std::string("malformed embeddings response: ") + e.what());
    }
}

void l2_normalize(std::vector<float>& v) {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * x;
    const double norm = std::sqrt(sum);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw Error(Errc::provider_contract_violation, "cannot normalize a zero or non-finite vector");
    }
    for (float& x : v) x = static_cast<float>(x / norm);
}

std::vector<EmbeddingVector> embed(std::span<const std::string> texts, EmbeddingProvider& provider) {
    if (texts.empty()) {
        throw Error(Errc::empty_input, "no texts to embed");
    }
    for (const auto& t : texts) {
        if (trim(t).empty()) {
            throw Error(Errc::empty_input, "cannot embed an empty text");
        }
    }
    auto raw = provider.embed_raw(texts);
    if (raw.size() != texts.size()) {
        throw Error(Errc::provider_contract_violation,
                    "provider returned " + std::to_string(raw.size()) + " vectors for " +
                        std::to_string(texts.size()) + " texts");
    }
    const auto model = provider.model_id();
    const std::size_t dim = raw.front().size();
    std::vector<EmbeddingVector> out;
    out.reserve(raw.size());
    for (auto& v : raw) {
        if (v.empty() || v.size() != dim) {
            throw Error(Errc::provider_contract_violation, "provider returned mixed vector dimensions");
        }
        if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); })) {
            throw Error(Errc::provider_contract_violation, "provider returned non-finite values");
        }
        l2_normalize(v);
        out.push_back({std::move(v), model});
    }
    return out;
}

EmbeddingVector embed_one(const std::string& text, EmbeddingProvider& provider) {
    return std::move(embed(std::span<const std::string>(&text, 1), provider).front());
}

VectorDatabase::VectorDatabase(std::string name, std::string model_id, std::size_t dim,
                               std::string fingerprint, std::int64_t build_time)
    : name_(std::move(name)), model_id_(std::move(model_id)), dim_(dim),
      fingerprint_(std::move(fingerprint)), build_time_(build_time) {}

void VectorDatabase::add(std::string chunk_id, const EmbeddingVector& vec) {
    if (vec.model_id != model_id_) {
        throw Error(Errc::model_mismatch, "vector from " + vec.model_id + " added to database of " + model_id_);
    }
    if (vec.dim() != dim_) {
        throw Error(Errc::provider_contract_violation,
                    "vector dim " + std::to_string(vec.dim()) + " != database dim " + std::to_string(dim_));
    }
    ids_.push_back(std::move(chunk_id));
    matrix_.insert(matrix_.end(), vec.values.begin(), vec.values.end());
}

std::vector<SearchHit> VectorDatabase::search(const EmbeddingVector& query, std::size_t k) const {
    if (query.model_id != model_id_) {
        throw Error(Errc::model_mismatch,
                    "query embedded with " + query.model_id + " but database '" + name_ + "' uses " + model_id_);
    }
    if (query.dim() != dim_) {
        throw Error(Errc::model_mismatch, "query dim does not match database dim");
    }
    if (k == 0) {
        throw Error(Errc::invalid_argument, "k must be at least 1");
    }
    const std::size_t n = ids_.size();
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float* r = matrix_.data() + i * dim_;
        double dot = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) dot += static_cast<double>(r[j]) * query.values[j];
        scores[i] = dot;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(k, n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return ids_[a] < ids_[b];
                      });
    std::vector<SearchHit> hits;
    hits.reserve(take);
    for (std::size_t i = 0; i < take; ++i) hits.push_back({ids_[order[i]], scores[order[i]]});
    return hits;
}

namespace {

constexpr char kMagic[8] = {'K', 'B', 'A', 'V', 'D', 'B', '\0', '\1'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_str(std::string& out, std::string_view s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw Error(Errc::format_error, "vector database file is truncated");
        }
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32() {
        auto s = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
        return v;
    }
    std::uint64_t u64() {
        auto s = take(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
        return v;
    }
    std::string str() { return std::string(take(u32())); }
    bool done() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

class FileLock {
public:
    explicit FileLock(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) {
            if (fd_ >= 0) ::close(fd_);
            throw Error(Errc::io_error, "cannot lock " + path.string());
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

} // namespace

std::string VectorDatabase::serialize() const {
    std::string out;
    out.reserve(64 + matrix_.size() * 4 + ids_.size() * 48);
    out.append(kMagic, sizeof kMagic);
    put_u32(out, kFormatVersion);
    put_str(out, name_);
    put_str(out, model_id_);
    put_str(out, fingerprint_);
    put_u64(out, static_cast<std::uint64_t>(build_time_));
    put_u32(out, static_cast<std::uint32_t>(dim_));
    put_u32(out, static_cast<std::uint32_t>(ids_.size()));
    for (float f : matrix_) put_u32(out, std::bit_cast<std::uint32_t>(f));
    for (const auto& id : ids_) put_str(out, id);
    return out;
}

VectorDatabase VectorDatabase::deserialize(std::string_view bytes) {
    Reader r(bytes);
    if (r.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
        throw Error(Errc::format_error, "not a vector database file");
    }
    if (auto v = r.u32(); v != kFormatVersion) {
        throw Error(Errc::format_error, "unsupported vector database version " + std::to_string(v));
    }
    VectorDatabase db;
    db.name_ = r.str();
    db.model_id_ = r.str();
    db.fingerprint_ = r.str();
    db.build_time_ = static_cast<std::int64_t>(r.u64());
    db.dim_ = r.u32();
    const std::size_t count = r.u32();
    if (db.dim_ != 0 && count > r.remaining() / 4 / db.dim_) {
        throw Error(Errc::format_error, "vector database file is truncated");
    }
    db.matrix_.resize(count * db.dim_);
    for (auto& f : db.matrix_) f = std::bit_cast<float>(r.u32());
    db.ids_.reserve(count);
    for (std::size_t i = 0; i < count; ++i) db.ids_.push_back(r.str());
    if (!r.done()) {
        throw Error(Errc::format_error, "trailing bytes after vector database");
    }
    return db;
}

void VectorDatabase::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto lock_path = path;
    lock_path += ".lock";
    FileLock lock(lock_path);
    write_file_atomic(path, serialize());
}

VectorDatabase VectorDatabase::load(const std::filesystem::path& path) {
    return deserialize(read_text_file(path));
}

std::string corpus_fingerprint(std::span<const DocumentChunk> chunks) {
    std::string buf;
    for (const auto& c : chunks) {
        buf += c.chunk_id;
        buf += '\x1f';
        buf += std::to_string(c.span.start) + ":" + std::to_string(c.span.end);
        buf += '\x1f';
        buf += c.text;
        buf += '\x1e';
    }
    return sha256_hex(buf);
}

VectorDatabase build_database(std::span<const DocumentChunk> chunks, EmbeddingProvider& provider,
                              const BuildOptions& options) {
    if (chunks.empty()) {
        throw Error(Errc::empty_corpus, "no chunks to index");
    }
    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
    std::vector<std::string> texts;
    std::optional<VectorDatabase> db;
    for (std::size_t i = 0; i < chunks.size(); i += batch) {
        texts.clear();
        const std::size_t end = std::min(chunks.size(), i + batch);
        for (std::size_t j = i; j < end; ++j) texts.push_back(chunks[j].text);
        auto vecs = embed(texts, provider);
        if (!db) {
            db.emplace(options.name, vecs.front().model_id, vecs.front().dim(),
                       corpus_fingerprint(chunks), options.build_time);
        }
        for (std::size_t j = i; j < end; ++j) {
            const auto& v = vecs[j - i];
            if (v.dim() != db->dim()) {
                throw Error(Errc::provider_contract_violation, "provider returned mixed vector dimensions");
            }
            db->add(chunks[j].chunk_id, v);
        }
    }
    std::vector<std::string> ids = db->chunk_ids();
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw Error(Errc::invalid_argument, "duplicate chunk ids in database input");
    }
    return std::move(*db);
}

std::int64_t default_build_time() {
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch != nullptr && *epoch) {
        return std::strtoll(epoch, nullptr, 10);
    }
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

} // namespace kba
