#include "kba/corpus.hpp"
#include "kba/error.hpp"
#include "kba/util.hpp"

#include "support.hpp"

#include <doctest.h>

#include <random>

using namespace kba;

namespace {

CorpusConfig fixture_config() {
    CorpusConfig c;
    c.other_glob = "changes/**";
    c.link_base = "https://docs.example.org/";
    return c;
}

// Independent check: strip each chunk's overlap with its predecessor and concatenate.
std::string reassemble(const std::vector<DocumentChunk>& chunks) {
    std::string out;
    std::size_t covered = 0;
    for (const auto& c : chunks) {
        REQUIRE(c.span.start <= covered);
        const auto skip = covered - c.span.start;
        const auto b = utf8_boundaries(c.text);
        REQUIRE(skip < b.size());
        out += c.text.substr(b[skip]);
        covered = c.span.end;
    }
    return out;
}

} // namespace

TEST_CASE("clean_markdown strips front matter, labels and extra blank lines") {
    const auto cfg = fixture_config();
    const std::string raw = "---\ntitle: X\n---\n(man_x)=\n:orphan:\n# X  \n\n\n\nBody\r\n<!-- note -->\n";
    CHECK(clean_markdown(raw, cfg) == "# X\n\nBody");

    auto keep = cfg;
    keep.strip_front_matter = false;
    keep.strip_patterns.clear();
    CHECK(clean_markdown("---\na: b\n---\nz", keep) == "---\na: b\n---\nz");

    auto bad = cfg;
    bad.strip_patterns = {"("};
    CHECK_THROWS_AS(clean_markdown("x", bad), Error);
}

TEST_CASE("load_corpus classifies documents and derives links") {
    const auto docs = load_corpus(test::fixtures() / "corpus", fixture_config());
    REQUIRE(docs.size() == 6);
    std::map<std::string, SourceDocument> by_id;
    for (const auto& d : docs) by_id[d.doc_id] = d;

    const auto& vec = by_id.at("manualpages/Vec/VecCreate.md");
    CHECK(vec.kind == DocKind::manual_page);
    CHECK(vec.keyword == "VecCreate");
    CHECK(vec.title == "VecCreate");
    CHECK(vec.link == "https://docs.example.org/manualpages/Vec/VecCreate.html");
    CHECK(vec.body.find("title:") == std::string::npos);

    CHECK(by_id.at("manual/mat.md").kind == DocKind::guide);
    CHECK(by_id.at("manual/mat.md").title == "Matrices");
    CHECK(by_id.at("manual/mat.md").body.find(":orphan:") == std::string::npos);
    CHECK(by_id.at("changes/v3.20.md").kind == DocKind::other);
    CHECK(by_id.at("manualpages/Mat/MatSetValues.md").body.rfind("# MatSetValues", 0) == 0);
}

TEST_CASE("load_corpus error cases") {
    test::TempDir dir;
    CHECK_THROWS_WITH_AS(load_corpus(dir / "nope", {}), doctest::Contains("not found"), Error);
    try {
        load_corpus(dir.path(), {});
        FAIL("expected empty-corpus");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_corpus);
    }
    test::spit(dir / "a/manualpages/KSPSolve.md", "# KSPSolve\nx");
    test::spit(dir / "b/manualpages/KSPSolve.md", "# KSPSolve\ny");
    auto docs = load_corpus(dir.path(), {});
    try {
        build_keyword_index(docs);
        FAIL("expected duplicate-keyword");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::duplicate_keyword);
        CHECK(std::string(e.what()).find("a/manualpages/KSPSolve.md") != std::string::npos);
        CHECK(std::string(e.what()).find("b/manualpages/KSPSolve.md") != std::string::npos);
    }
}

TEST_CASE("chunks reassemble to the cleaned body for many sizes") {
    const auto docs = load_corpus(test::fixtures() / "corpus", fixture_config());
    for (auto [size, overlap] : std::vector<std::pair<std::size_t, std::size_t>>{
             {1000, 200}, {120, 30}, {64, 0}, {40, 39}, {17, 5}, {3, 1}, {1, 0}}) {
        for (const auto& d : docs) {
            CAPTURE(d.doc_id);
            CAPTURE(size);
            auto chunks = chunk_document(d, size, overlap);
            REQUIRE_FALSE(chunks.empty());
            CHECK(reassemble(chunks) == d.body);
            for (std::size_t i = 0; i < chunks.size(); ++i) {
                const auto& c = chunks[i];
                CHECK(c.ordinal == i);
                CHECK(c.chunk_id == make_chunk_id(d.doc_id, i));
                CHECK(c.span.size() <= size);
                CHECK(utf8_length(c.text) == c.span.size());
                if (i > 0) {
                    const auto& p = chunks[i - 1];
                    CHECK(p.span.end - c.span.start == std::min(overlap, p.span.size()));
                    CHECK(c.span.end > p.span.end);
                }
            }
        }
    }
}

TEST_CASE("chunking prefers paragraph, then line, then space boundaries") {
    SourceDocument d;
    d.doc_id = "d";
    d.body = "aaaa bbbb\ncccc\n\ndddd";
    auto chunks = chunk_document(d, 16, 0);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].text == "aaaa bbbb\ncccc\n\n");
    CHECK(chunks[1].text == "dddd");

    d.body = "aaaa bbbb\ncccc dddd";
    chunks = chunk_document(d, 12, 0);
    CHECK(chunks[0].text == "aaaa bbbb\n");

    d.body = "aaaaaaaaaa";
    chunks = chunk_document(d, 4, 1);
    CHECK(chunks[0].text == "aaaa");
    CHECK(chunks[1].span.start == 3);

    CHECK_THROWS_AS(chunk_document(d, 4, 4), Error);
}

TEST_CASE("random bodies with multi-byte text reassemble exactly") {
    std::mt19937 rng(7);
    const std::vector<std::string> atoms{"a", "b", " ", "\n", "\n\n", "\xc3\xa9", "\xe2\x80\x96", "\xf0\x9f\x99\x82"};
    for (int iter = 0; iter < 300; ++iter) {
        SourceDocument d;
        d.doc_id = "r";
        const int len = 1 + static_cast<int>(rng() % 200);
        for (int i = 0; i < len; ++i) d.body += atoms[rng() % atoms.size()];
        const std::size_t size = 1 + rng() % 40;
        const std::size_t overlap = rng() % size;
        CHECK(reassemble(chunk_document(d, size, overlap)) == d.body);
    }
}

TEST_CASE("keyword index lookups and persistence") {
    const auto docs = load_corpus(test::fixtures() / "corpus", fixture_config());
    auto idx = build_keyword_index(docs);
    CHECK(idx.size() == 3);
    CHECK(idx.find_exact("MatSetValues") == std::optional<std::string>("manualpages/Mat/MatSetValues.md"));
    CHECK_FALSE(idx.find_exact("matsetvalues"));
    CHECK(idx.find_case_insensitive("matsetvalues") == std::vector<std::string>{"manualpages/Mat/MatSetValues.md"});
    auto back = KeywordIndex::from_json(idx.to_json());
    CHECK(back.size() == idx.size());
    CHECK(back.find_exact("VecCreate"));
    CHECK_THROWS_AS(KeywordIndex::from_json("{\"entries\": 3}"), Error);
}

TEST_CASE("chunk store round trips through JSONL") {
    const auto docs = load_corpus(test::fixtures() / "corpus", fixture_config());
    CorpusConfig cfg = fixture_config();
    cfg.chunk_size = 200;
    cfg.overlap = 40;
    ChunkStore store(chunk_corpus(docs, cfg));
    auto back = ChunkStore::from_jsonl(store.to_jsonl());
    REQUIRE(back.size() == store.size());
    CHECK(back.chunks() == store.chunks());
    const auto* first = back.first_of("manual/mat.md");
    REQUIRE(first != nullptr);
    CHECK(first->ordinal == 0);
    CHECK(back.find(first->chunk_id) != nullptr);
    CHECK(back.find("nope") == nullptr);
}
