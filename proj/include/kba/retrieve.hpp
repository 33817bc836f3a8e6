#pragma once

#include "kba/corpus.hpp"
#include "kba/index.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace kba {

enum class CandidateOrigin { vector_search, keyword_match };
enum class KeywordMatching { exact, case_insensitive };

std::string_view to_string(CandidateOrigin origin) noexcept;
std::string_view to_string(KeywordMatching mode) noexcept;
KeywordMatching keyword_matching_from_string(std::string_view s);

/// Similarity reported for keyword hits; they always sort ahead of vector hits.
inline constexpr double kKeywordSimilarity = 1.0;

struct RetrievalCandidate {
    std::string chunk_id;
    std::string text;
    std::string link;
    double similarity = 0.0;
    CandidateOrigin origin = CandidateOrigin::vector_search;
};

struct RetrievalConfig {
    std::size_t first_pass_k = 8;
    std::size_t final_l = 4;
    KeywordMatching keyword_matching = KeywordMatching::exact;

    void validate() const;
};

/// Identifier-style tokens (runs of [A-Za-z0-9_]) in order of appearance.
std::vector<std::string> query_tokens(std::string_view query);

/// Manual-page doc ids hit by whole tokens of the query, in query order, unique.
std::vector<std::string> keyword_hits(std::string_view query, const KeywordIndex& keywords,
                                      KeywordMatching mode);

/// First-pass context: keyword-matched manual pages first, then vector top-K,
/// deduplicated by chunk id with the keyword origin winning.
std::vector<RetrievalCandidate> retrieve(std::string_view query, const VectorDatabase& db,
                                         const ChunkStore& chunks, const KeywordIndex& keywords,
                                         const RetrievalConfig& config, EmbeddingProvider& provider);

} // namespace kba
