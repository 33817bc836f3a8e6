#include "kba/rerank.hpp"

#include "http_client.hpp"
#include "kba/error.hpp"
#include "kba/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

namespace kba {

using nlohmann::json;

std::vector<std::string> lexical_terms(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    while (i < text.size()) {
        while (i < text.size() && !alnum(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && alnum(text[j])) ++j;
        if (j > i) {
            std::string term = to_lower_ascii(text.substr(i, j - i));
            if (term.size() > 3 && term.back() == 's' && term[term.size() - 2] != 's') {
                term.pop_back();
            }
            out.push_back(std::move(term));
        }
        i = j;
    }
    return out;
}

TermStatistics TermStatistics::from_texts(std::span<const std::string> texts) {
    TermStatistics st;
    st.documents = texts.size();
    std::size_t total = 0;
    for (const auto& t : texts) {
        auto terms = lexical_terms(t);
        total += terms.size();
        std::set<std::string> uniq(terms.begin(), terms.end());
        for (const auto& term : uniq) ++st.document_frequency[term];
    }
    st.average_length = texts.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(texts.size());
    return st;
}

LexicalScorer::LexicalScorer(double k1, double b) : k1_(k1), b_(b) {}

LexicalScorer::LexicalScorer(TermStatistics corpus_stats, double k1, double b)
    : k1_(k1), b_(b), corpus_stats_(std::move(corpus_stats)) {}

std::string LexicalScorer::id() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "lexical-bm25(k1=%g,b=%g)", k1_, b_);
    return buf;
}

std::vector<double> LexicalScorer::score(std::string_view query, std::span<const std::string> passages) {
    const TermStatistics local = corpus_stats_ ? TermStatistics{} : TermStatistics::from_texts(passages);
    const TermStatistics& st = corpus_stats_ ? *corpus_stats_ : local;

    auto qterms = lexical_terms(query);
    std::sort(qterms.begin(), qterms.end());
    qterms.erase(std::unique(qterms.begin(), qterms.end()), qterms.end());

    const double n = static_cast<double>(st.documents);
    std::vector<double> idf(qterms.size());
    for (std::size_t i = 0; i < qterms.size(); ++i) {
        auto it = st.document_frequency.find(qterms[i]);
        const double df = it == st.document_frequency.end() ? 0.0 : static_cast<double>(it->second);
        idf[i] = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    }

    std::vector<double> scores;
    scores.reserve(passages.size());
    for (const auto& p : passages) {
        auto terms = lexical_terms(p);
        std::map<std::string_view, int> tf;
        for (const auto& t : terms) ++tf[t];
        const double len = static_cast<double>(terms.size());
        const double avg = st.average_length > 0.0 ? st.average_length : 1.0;
        double s = 0.0;
        for (std::size_t i = 0; i < qterms.size(); ++i) {
            auto it = tf.find(qterms[i]);
            if (it == tf.end()) continue;
            const double f = it->second;
            s += idf[i] * f * (k1_ + 1.0) / (f + k1_ * (1.0 - b_ + b_ * len / avg));
        }
        scores.push_back(s);
    }
    return scores;
}

HttpRerankScorer::HttpRerankScorer(HttpRerankOptions options) : options_(std::move(options)) {
    if (options_.base_url.empty()) {
        throw Error(Errc::invalid_config, "http reranker needs base_url");
    }
}

std::string HttpRerankScorer::id() const {
    return "http-rerank:" + (options_.model.empty() ? options_.base_url : options_.model);
}

std::vector<double> HttpRerankScorer::score(std::string_view query, std::span<const std::string> passages) {
    json req{{"query", query}, {"documents", std::vector<std::string>(passages.begin(), passages.end())}};
    if (!options_.model.empty()) req["model"] = options_.model;
    detail::HttpRequestOptions opts;
    opts.timeout_seconds = options_.timeout_seconds;
    opts.bearer_env = options_.api_key_env;
    auto res = detail::post_json(options_.base_url, "/rerank", req, opts);
    try {
        std::vector<double> out;
        if (res.contains("scores")) {
            out = res.at("scores").get<std::vector<double>>();
        } else {
            out.assign(passages.size(), std::nan(""));
            for (const auto& r : res.at("results")) {
                auto idx = r.at("index").get<std::size_t>();
                if (idx >= out.size()) throw ProviderError(Errc::provider_contract_violation, "rerank index out of range");
                out[idx] = r.at("relevance_score").get<double>();
            }
        }
        if (out.size() != passages.size() ||
            !std::all_of(out.begin(), out.end(), [](double x) { return std::isfinite(x); })) {
            throw ProviderError(Errc::provider_contract_violation,
                                "reranker must return one finite score per passage");
        }
        return out;
    } catch (const json::exception& e) {
        throw ProviderError(Errc::provider_contract_violation, std::string("malformed rerank response: ") + e.what());
    }
}

namespace {

RerankedItem to_item(const RetrievalCandidate& c, double score) {
    return {c.chunk_id, c.text, c.link, score, c.origin == CandidateOrigin::keyword_match, c.origin};
}

} // namespace

RerankedContext truncate_context(std::string_view query, std::span<const RetrievalCandidate> candidates,
                                 std::size_t final_l) {
    RerankedContext ctx;
    ctx.query = std::string(query);
    ctx.scorer_id = "none";
    const std::size_t take = std::min(final_l, candidates.size());
    for (std::size_t i = 0; i < take; ++i) ctx.items.push_back(to_item(candidates[i], candidates[i].similarity));
    return ctx;
}

RerankedContext rerank(std::string_view query, std::span<const RetrievalCandidate> candidates,
                       const RetrievalConfig& config, RerankScorer& scorer) {
    if (candidates.empty()) {
        throw Error(Errc::empty_input, "no candidates to rerank");
    }
    config.validate();

    std::vector<std::string> passages;
    passages.reserve(candidates.size());
    for (const auto& c : candidates) passages.push_back(c.text);

    std::vector<double> scores;
    try {
        scores = scorer.score(query, passages);
        if (scores.size() != candidates.size()) {
            throw Error(Errc::provider_contract_violation, "scorer returned wrong number of scores");
        }
    } catch (const std::exception& e) {
        spdlog::warn("rerank scorer {} failed, passing candidates through: {}", scorer.id(), e.what());
        auto ctx = truncate_context(query, candidates, config.final_l);
        ctx.scorer_id = scorer.id();
        ctx.degraded = true;
        ctx.degraded_reason = e.what();
        return ctx;
    }

    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const bool pa = candidates[a].origin == CandidateOrigin::keyword_match;
        const bool pb = candidates[b].origin == CandidateOrigin::keyword_match;
        if (pa != pb) return pa;
        if (pa) return false; // pinned items keep input order
        return scores[a] > scores[b];
    });

    RerankedContext ctx;
    ctx.query = std::string(query);
    ctx.scorer_id = scorer.id();
    const std::size_t take = std::min(config.final_l, candidates.size());
    for (std::size_t i = 0; i < take; ++i) ctx.items.push_back(to_item(candidates[order[i]], scores[order[i]]));
    return ctx;
}

} // namespace kba
