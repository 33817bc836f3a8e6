#pragma once

// Reference implementations the library is checked against. Each one is the
// obvious slow version of the behavior under test.

#include "kba/corpus.hpp"
#include "kba/index.hpp"
#include "kba/rerank.hpp"
#include "kba/retrieve.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace kba::test {

/// Full scan: cosine of every stored row against the query, sorted by score
/// descending then chunk id ascending.
inline std::vector<SearchHit> brute_force_topk(const VectorDatabase& db, const EmbeddingVector& q, std::size_t k) {
    std::vector<SearchHit> all;
    for (std::size_t i = 0; i < db.size(); ++i) {
        const auto row = db.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) dot += static_cast<double>(row[j]) * q.values[j];
        all.push_back({db.chunk_ids()[i], dot});
    }
    std::stable_sort(all.begin(), all.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.chunk_id < b.chunk_id;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

/// Cosine from unnormalized vectors in long double, used to sanity-check scores.
inline double raw_cosine(const std::vector<float>& a, const std::vector<float>& b) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<long double>(a[i]) * b[i];
        na += static_cast<long double>(a[i]) * a[i];
        nb += static_cast<long double>(b[i]) * b[i];
    }
    return static_cast<double>(dot / std::sqrt(na * nb));
}

inline const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words{
        "matrix", "vector", "solver", "preconditioner", "assembly", "parallel", "sparse",  "dense",
        "KSPSolve", "VecCreate", "MatSetValues", "residual", "norm",    "iteration", "gmres", "cg",
        "jacobi", "multigrid", "options", "database", "mpi", "rank", "layout", "ghost", "block",
        "nonzero", "malloc", "preallocation", "least", "squares", "convergence", "tolerance", "monitor"};
    return words;
}

inline std::string random_text(std::mt19937_64& rng, int max_words = 8) {
    const auto& v = vocabulary();
    const int n = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_words));
    std::string s;
    for (int i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += v[rng() % v.size()];
    }
    return s;
}

struct RandomDb {
    VectorDatabase db;
    std::vector<std::string> texts;
};

/// n records with shuffled ids; about a tenth repeat an earlier text so exact ties occur.
inline RandomDb random_database(std::mt19937_64& rng, std::size_t n, EmbeddingProvider& provider) {
    RandomDb out;
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = "c" + std::to_string(100000 + i);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && rng() % 10 == 0) {
            out.texts.push_back(out.texts[rng() % i]);
        } else {
            out.texts.push_back(random_text(rng));
        }
    }
    auto vecs = embed(out.texts, provider);
    out.db = VectorDatabase("rand", provider.model_id(), vecs.front().dim(), "fp", 0);
    for (std::size_t i = 0; i < n; ++i) out.db.add(ids[i], vecs[i]);
    return out;
}

/// Contract every rerank result must satisfy. Returns an empty string when it
/// holds, otherwise a description of the first violation.
inline std::string rerank_contract_violation(std::span<const RetrievalCandidate> in, const RerankedContext& out,
                                             std::size_t final_l) {
    const std::size_t want = std::min(final_l, in.size());
    if (out.items.size() != want) {
        return "length " + std::to_string(out.items.size()) + " != " + std::to_string(want);
    }
    std::vector<std::size_t> pos;
    for (const auto& item : out.items) {
        auto it = std::find_if(in.begin(), in.end(), [&](const RetrievalCandidate& c) { return c.chunk_id == item.chunk_id; });
        if (it == in.end()) return "item " + item.chunk_id + " is not a candidate";
        if (it->text != item.text) return "item " + item.chunk_id + " text changed";
        pos.push_back(static_cast<std::size_t>(it - in.begin()));
    }
    auto sorted = pos;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) return "duplicate items";
    if (out.degraded) return {};
    bool in_scored = false;
    for (std::size_t i = 0; i < out.items.size(); ++i) {
        const auto& it = out.items[i];
        if (it.pinned && in_scored) return "pinned item after a scored item";
        if (!it.pinned) in_scored = true;
        if (i == 0 || it.pinned != out.items[i - 1].pinned) continue;
        const auto& prev = out.items[i - 1];
        if (it.pinned) {
            if (pos[i] < pos[i - 1]) return "pinned items out of retrieval order";
            continue;
        }
        if (it.score > prev.score) return "scores increase at position " + std::to_string(i);
        if (it.score == prev.score && pos[i] < pos[i - 1]) return "tie not stable at position " + std::to_string(i);
    }
    return {};
}

} // namespace kba::test
