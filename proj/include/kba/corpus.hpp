#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kba {

enum class DocKind { manual_page, guide, other };

std::string_view to_string(DocKind kind) noexcept;
DocKind doc_kind_from_string(std::string_view s);

struct CorpusConfig {
    std::size_t chunk_size = 1000;
    std::size_t overlap = 200;
    std::string manualpage_glob = "**/manualpages/**";
    /// Files matching this glob (and not the manual page glob) are kind `other`.
    std::string other_glob;
    bool strip_front_matter = true;
    /// ECMAScript regexes; any line that matches is removed.
    std::vector<std::string> strip_patterns = default_strip_patterns();
    /// Prefix for canonical links. Empty means links stay corpus-relative.
    std::string link_base;

    static std::vector<std::string> default_strip_patterns();
};

struct SourceDocument {
    std::string doc_id;
    std::string path;
    DocKind kind = DocKind::guide;
    std::string title;
    std::string body;
    std::string link;
    std::string keyword;
};

/// Half-open range in code points of the cleaned body.
struct CharSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - start; }
    friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct DocumentChunk {
    std::string chunk_id;
    std::string doc_id;
    std::string text;
    CharSpan span;
    std::string link;
    std::size_t ordinal = 0;

    friend bool operator==(const DocumentChunk&, const DocumentChunk&) = default;
};

/// Applies front-matter and line-pattern stripping, collapses runs of blank
/// lines and trims the result.
std::string clean_markdown(std::string_view raw, const CorpusConfig& config);

std::vector<SourceDocument> load_corpus(const std::filesystem::path& root,
                                        const CorpusConfig& config);

/// Recursive-separator splitter: paragraph, then line, then space, then a hard
/// cut. Sizes are in code points. Consecutive chunks overlap by exactly
/// min(overlap, length of the previous chunk).
std::vector<DocumentChunk> chunk_document(const SourceDocument& doc, std::size_t chunk_size,
                                          std::size_t overlap);

std::vector<DocumentChunk> chunk_corpus(const std::vector<SourceDocument>& docs,
                                        const CorpusConfig& config);

std::string make_chunk_id(std::string_view doc_id, std::size_t ordinal);

class KeywordIndex {
public:
    struct Entry {
        std::string keyword;
        std::string doc_id;
        std::string path;
    };

    /// Adds a manual page. Throws duplicate-keyword naming both paths.
    void add(Entry entry);

    std::optional<std::string> find_exact(std::string_view keyword) const;
    /// Every doc id whose keyword equals `keyword` ignoring ASCII case, sorted.
    std::vector<std::string> find_case_insensitive(std::string_view keyword) const;

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::map<std::string, Entry, std::less<>>& entries() const noexcept { return entries_; }

    std::string to_json() const;
    static KeywordIndex from_json(std::string_view text);

private:
    std::map<std::string, Entry, std::less<>> entries_;
    std::multimap<std::string, std::string, std::less<>> folded_;
};

KeywordIndex build_keyword_index(const std::vector<SourceDocument>& docs);

/// In-memory lookup of chunks by id, persisted as JSONL (one chunk per line).
class ChunkStore {
public:
    ChunkStore() = default;
    explicit ChunkStore(std::vector<DocumentChunk> chunks);

    const DocumentChunk* find(std::string_view chunk_id) const;
    /// First chunk of a document, the unit injected for keyword hits.
    const DocumentChunk* first_of(std::string_view doc_id) const;

    const std::vector<DocumentChunk>& chunks() const noexcept { return chunks_; }
    std::size_t size() const noexcept { return chunks_.size(); }

    std::string to_jsonl() const;
    static ChunkStore from_jsonl(std::string_view text);

private:
    std::vector<DocumentChunk> chunks_;
    std::map<std::string, std::size_t, std::less<>> by_id_;
    std::map<std::string, std::size_t, std::less<>> first_by_doc_;
};

} // namespace kba
