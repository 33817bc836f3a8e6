#include "kba/retrieve.hpp"

#include "kba/error.hpp"
#include "kba/util.hpp"

#include <cctype>
#include <set>

namespace kba {

std::string_view to_string(CandidateOrigin origin) noexcept {
    return origin == CandidateOrigin::keyword_match ? "keyword_match" : "vector_search";
}

std::string_view to_string(KeywordMatching mode) noexcept {
    return mode == KeywordMatching::case_insensitive ? "case_insensitive" : "exact";
}

KeywordMatching keyword_matching_from_string(std::string_view s) {
    if (s == "exact") return KeywordMatching::exact;
    if (s == "case_insensitive") return KeywordMatching::case_insensitive;
    throw Error(Errc::invalid_config, "keyword_matching must be exact or case_insensitive");
}

void RetrievalConfig::validate() const {
    if (first_pass_k == 0 || final_l == 0) {
        throw Error(Errc::invalid_config, "first_pass_k and final_l must be positive");
    }
    if (final_l > first_pass_k) {
        throw Error(Errc::invalid_config, "final_l must not exceed first_pass_k");
    }
}

std::vector<std::string> query_tokens(std::string_view query) {
    std::vector<std::string> out;
    std::size_t i = 0;
    auto ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    while (i < query.size()) {
        while (i < query.size() && !ident(query[i])) ++i;
        std::size_t j = i;
        while (j < query.size() && ident(query[j])) ++j;
        if (j > i) out.emplace_back(query.substr(i, j - i));
        i = j;
    }
    return out;
}

std::vector<std::string> keyword_hits(std::string_view query, const KeywordIndex& keywords,
                                      KeywordMatching mode) {
    std::vector<std::string> hits;
    std::set<std::string, std::less<>> seen;
    for (const auto& tok : query_tokens(query)) {
        std::vector<std::string> docs;
        if (mode == KeywordMatching::exact) {
            if (auto d = keywords.find_exact(tok)) docs.push_back(*d);
        } else {
            docs = keywords.find_case_insensitive(tok);
        }
        for (auto& d : docs) {
            if (seen.insert(d).second) hits.push_back(std::move(d));
        }
    }
    return hits;
}

std::vector<RetrievalCandidate> retrieve(std::string_view query, const VectorDatabase& db,
                                         const ChunkStore& chunks, const KeywordIndex& keywords,
                                         const RetrievalConfig& config, EmbeddingProvider& provider) {
    if (trim(query).empty()) {
        throw Error(Errc::empty_input, "query is empty");
    }
    config.validate();

    std::vector<RetrievalCandidate> out;
    std::set<std::string, std::less<>> taken;
    for (const auto& doc_id : keyword_hits(query, keywords, config.keyword_matching)) {
        const DocumentChunk* c = chunks.first_of(doc_id);
        if (c == nullptr) {
            throw Error(Errc::not_found, "keyword index names " + doc_id + " but no chunk exists for it");
        }
        if (taken.insert(c->chunk_id).second) {
            out.push_back({c->chunk_id, c->text, c->link, kKeywordSimilarity,
                           CandidateOrigin::keyword_match});
        }
    }

    const auto qvec = embed_one(std::string(query), provider);
    for (const auto& hit : db.search(qvec, config.first_pass_k)) {
        if (taken.count(hit.chunk_id)) continue;
        const DocumentChunk* c = chunks.find(hit.chunk_id);
        if (c == nullptr) {
            throw Error(Errc::not_found, "database references unknown chunk " + hit.chunk_id);
        }
        taken.insert(hit.chunk_id);
        out.push_back({c->chunk_id, c->text, c->link, hit.score, CandidateOrigin::vector_search});
    }
    return out;
}

} // namespace kba
