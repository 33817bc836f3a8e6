#pragma once

#include "kba/index.hpp"
#include "kba/retrieve.hpp"

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kba {

/// Scores (query, passage) pairs. One float per passage, higher is more relevant.
class RerankScorer {
public:
    virtual ~RerankScorer() = default;

    virtual std::string id() const = 0;
    virtual std::vector<double> score(std::string_view query,
                                      std::span<const std::string> passages) = 0;
};

/// Lower-cased alphanumeric terms with a trailing plural 's' dropped.
std::vector<std::string> lexical_terms(std::string_view text);

/// Collection statistics for IDF. Defaults to the candidate set itself.
struct TermStatistics {
    std::size_t documents = 0;
    double average_length = 0.0;
    std::map<std::string, std::size_t, std::less<>> document_frequency;

    static TermStatistics from_texts(std::span<const std::string> texts);
};

/// BM25 over the passages: idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)),
/// tf saturation with k1 and length normalization with b.
class LexicalScorer final : public RerankScorer {
public:
    explicit LexicalScorer(double k1 = 1.2, double b = 0.75);
    /// Uses fixed corpus-wide statistics instead of the candidate set.
    LexicalScorer(TermStatistics corpus_stats, double k1 = 1.2, double b = 0.75);

    std::string id() const override;
    std::vector<double> score(std::string_view query, std::span<const std::string> passages) override;

private:
    double k1_;
    double b_;
    std::optional<TermStatistics> corpus_stats_;
};

struct HttpRerankOptions {
    std::string base_url;
    std::string model;
    std::string api_key_env;
    double timeout_seconds = 10.0;
};

/// Remote cross-encoder: `POST {base}/rerank {model, query, documents}` answered
/// with `{"scores": [...]}` or `{"results": [{"index", "relevance_score"}]}`.
class HttpRerankScorer final : public RerankScorer {
public:
    explicit HttpRerankScorer(HttpRerankOptions options);

    std::string id() const override;
    std::vector<double> score(std::string_view query, std::span<const std::string> passages) override;

private:
    HttpRerankOptions options_;
};

struct RerankedItem {
    std::string chunk_id;
    std::string text;
    std::string link;
    double score = 0.0;
    bool pinned = false;
    CandidateOrigin origin = CandidateOrigin::vector_search;
};

struct RerankedContext {
    std::vector<RerankedItem> items;
    std::string query;
    std::string scorer_id;
    bool degraded = false;
    std::string degraded_reason;
};

/// Keeps the top `final_l` candidates. Keyword hits are pinned ahead of the
/// scored items; the rest are ordered by score, ties keeping input order.
/// A failing scorer degrades to the first `final_l` candidates.
RerankedContext rerank(std::string_view query, std::span<const RetrievalCandidate> candidates,
                       const RetrievalConfig& config, RerankScorer& scorer);

/// Plain RAG context: the first `final_l` candidates in retrieval order.
RerankedContext truncate_context(std::string_view query, std::span<const RetrievalCandidate> candidates,
                                 std::size_t final_l);

} // namespace kba
