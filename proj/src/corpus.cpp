#include "kba/corpus.hpp"

#include "kba/error.hpp"
#include "kba/util.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace kba {

std::string_view to_string(DocKind kind) noexcept {
    switch (kind) {
    case DocKind::manual_page: return "manual_page";
    case DocKind::guide: return "guide";
    case DocKind::other: return "other";
    }
    return "other";
}

DocKind doc_kind_from_string(std::string_view s) {
    if (s == "manual_page") return DocKind::manual_page;
    if (s == "guide") return DocKind::guide;
    if (s == "other") return DocKind::other;
    throw Error(Errc::format_error, "unknown document kind '" + std::string(s) + "'");
}

std::vector<std::string> CorpusConfig::default_strip_patterns() {
    return {
        R"(^\s*\([A-Za-z0-9_.:-]+\)=\s*$)", // MyST label targets: (ch_ksp)=
        R"(^\s*:orphan:\s*$)",
        R"(^\s*\.\.\s+_[^:]+:\s*$)",        // reST labels
        R"(^\s*<!--.*-->\s*$)",
    };
}

namespace {

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto pos = text.find('\n', start);
        if (pos == std::string_view::npos) {
            out.push_back(text.substr(start));
            break;
        }
        out.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string md_to_html_path(std::string rel) {
    if (auto dot = rel.rfind('.'); dot != std::string::npos && rel.find('/', dot) == std::string::npos) {
        rel.resize(dot);
    }
    return rel + ".html";
}

bool is_markdown(const fs::path& p) {
    auto ext = to_lower_ascii(p.extension().string());
    return ext == ".md" || ext == ".markdown";
}

} // namespace

std::string clean_markdown(std::string_view raw, const CorpusConfig& config) {
    std::string text;
    text.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '\r' && i + 1 < raw.size() && raw[i + 1] == '\n') continue;
        text.push_back(raw[i]);
    }
    if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
        static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF) {
        text.erase(0, 3);
    }

    auto lines = lines_of(text);
    std::size_t first = 0;
    if (config.strip_front_matter && !lines.empty() && trim(lines[0]) == "---") {
        for (std::size_t i = 1; i < lines.size(); ++i) {
            auto t = trim(lines[i]);
            if (t == "---" || t == "...") {
                first = i + 1;
                break;
            }
        }
    }

    std::vector<std::regex> patterns;
    patterns.reserve(config.strip_patterns.size());
    for (const auto& p : config.strip_patterns) {
        try {
            patterns.emplace_back(p, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw Error(Errc::invalid_config, "bad strip pattern '" + p + "': " + e.what());
        }
    }

    std::string out;
    out.reserve(text.size());
    int blank_run = 0;
    for (std::size_t i = first; i < lines.size(); ++i) {
        std::string line(lines[i]);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
        bool drop = std::any_of(patterns.begin(), patterns.end(),
                                [&](const std::regex& re) { return std::regex_search(line, re); });
        if (drop) continue;
        if (line.empty()) {
            if (++blank_run > 1) continue;
        } else {
            blank_run = 0;
        }
        out += line;
        out += '\n';
    }
    return trim(out);
}

std::vector<SourceDocument> load_corpus(const fs::path& root, const CorpusConfig& config) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw Error(Errc::corpus_not_found, "corpus root not found: " + root.string());
    }
    std::vector<std::string> rels;
    for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied);
         it != fs::recursive_directory_iterator(); ++it) {
        if (it->is_regular_file() && is_markdown(it->path())) {
            rels.push_back(fs::relative(it->path(), root).generic_string());
        }
    }
    std::sort(rels.begin(), rels.end());
    if (rels.empty()) {
        throw Error(Errc::empty_corpus, "no Markdown files under " + root.string());
    }

    std::vector<SourceDocument> docs;
    docs.reserve(rels.size());
    for (const auto& rel : rels) {
        SourceDocument doc;
        doc.doc_id = rel;
        doc.path = rel;
        doc.body = clean_markdown(read_text_file(root / rel), config);
        if (doc.body.empty()) {
            throw Error(Errc::invalid_document, "document is empty after cleaning: " + rel);
        }
        if (glob_match(config.manualpage_glob, rel)) {
            doc.kind = DocKind::manual_page;
            doc.keyword = fs::path(rel).stem().string();
        } else if (!config.other_glob.empty() && glob_match(config.other_glob, rel)) {
            doc.kind = DocKind::other;
        } else {
            doc.kind = DocKind::guide;
        }

        doc.title = fs::path(rel).stem().string();
        for (auto line : lines_of(doc.body)) {
            if (line.size() > 2 && line[0] == '#' && line[1] == ' ') {
                doc.title = trim(line.substr(2));
                break;
            }
        }

        auto html = md_to_html_path(rel);
        if (config.link_base.empty()) {
            doc.link = html;
        } else if (config.link_base.back() == '/') {
            doc.link = config.link_base + html;
        } else {
            doc.link = config.link_base + "/" + html;
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::string make_chunk_id(std::string_view doc_id, std::size_t ordinal) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%04zu", ordinal);
    return std::string(doc_id) + buf;
}

std::vector<DocumentChunk> chunk_document(const SourceDocument& doc, std::size_t chunk_size,
                                          std::size_t overlap) {
    if (chunk_size == 0 || chunk_size <= overlap) {
        throw Error(Errc::invalid_config, "chunk_size must exceed overlap (chunk_size=" +
                                              std::to_string(chunk_size) +
                                              ", overlap=" + std::to_string(overlap) + ")");
    }
    static constexpr std::array<std::string_view, 3> separators{"\n\n", "\n", " "};

    const std::string& body = doc.body;
    const auto bounds = utf8_boundaries(body);
    const std::size_t n = bounds.size() - 1;

    auto ends_with_sep = [&](std::size_t cp, std::string_view sep) {
        std::size_t b = bounds[cp];
        return b >= sep.size() && std::string_view(body).substr(b - sep.size(), sep.size()) == sep;
    };

    std::vector<DocumentChunk> chunks;
    std::size_t start = 0;
    std::size_t fresh = 0; // end of the previous chunk; [start, fresh) is the overlap
    while (fresh < n) {
        const std::size_t limit = std::min(start + chunk_size, n);
        std::size_t end = limit;
        if (limit < n) {
            bool found = false;
            for (auto sep : separators) {
                for (std::size_t e = limit; e > fresh; --e) {
                    if (ends_with_sep(e, sep)) {
                        end = e;
                        found = true;
                        break;
                    }
                }
                if (found) break;
            }
        }

        DocumentChunk c;
        c.ordinal = chunks.size();
        c.chunk_id = make_chunk_id(doc.doc_id, c.ordinal);
        c.doc_id = doc.doc_id;
        c.text = body.substr(bounds[start], bounds[end] - bounds[start]);
        c.span = {start, end};
        c.link = doc.link;
        chunks.push_back(std::move(c));

        const std::size_t len = end - start;
        fresh = end;
        start = end - std::min(overlap, len);
    }
    return chunks;
}

std::vector<DocumentChunk> chunk_corpus(const std::vector<SourceDocument>& docs,
                                        const CorpusConfig& config) {
    std::vector<DocumentChunk> all;
    for (const auto& doc : docs) {
        auto chunks = chunk_document(doc, config.chunk_size, config.overlap);
        std::move(chunks.begin(), chunks.end(), std::back_inserter(all));
    }
    return all;
}

void KeywordIndex::add(Entry entry) {
    if (entry.keyword.empty()) {
        throw Error(Errc::invalid_document, "manual page without keyword: " + entry.path);
    }
    if (auto it = entries_.find(entry.keyword); it != entries_.end()) {
        throw Error(Errc::duplicate_keyword, "duplicate keyword '" + entry.keyword + "' in " +
                                                 it->second.path + " and " + entry.path);
    }
    folded_.emplace(to_lower_ascii(entry.keyword), entry.doc_id);
    auto key = entry.keyword;
    entries_.emplace(std::move(key), std::move(entry));
}

std::optional<std::string> KeywordIndex::find_exact(std::string_view keyword) const {
    if (auto it = entries_.find(keyword); it != entries_.end()) {
        return it->second.doc_id;
    }
    return std::nullopt;
}

std::vector<std::string> KeywordIndex::find_case_insensitive(std::string_view keyword) const {
    std::vector<std::string> out;
    auto [lo, hi] = folded_.equal_range(to_lower_ascii(keyword));
    for (auto it = lo; it != hi; ++it) out.push_back(it->second);
    std::sort(out.begin(), out.end());
    return out;
}

std::string KeywordIndex::to_json() const {
    json arr = json::array();
    for (const auto& [kw, e] : entries_) {
        arr.push_back({{"keyword", e.keyword}, {"doc_id", e.doc_id}, {"path", e.path}});
    }
    return json{{"entries", arr}}.dump(2) + "\n";
}

KeywordIndex KeywordIndex::from_json(std::string_view text) {
    KeywordIndex index;
    try {
        auto j = json::parse(text);
        for (const auto& e : j.at("entries")) {
            index.add({e.at("keyword").get<std::string>(), e.at("doc_id").get<std::string>(),
                       e.at("path").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw Error(Errc::format_error, std::string("keyword index: ") + e.what());
    }
    return index;
}

KeywordIndex build_keyword_index(const std::vector<SourceDocument>& docs) {
    KeywordIndex index;
    for (const auto& doc : docs) {
        if (doc.kind == DocKind::manual_page) {
            index.add({doc.keyword, doc.doc_id, doc.path});
        }
    }
    return index;
}

ChunkStore::ChunkStore(std::vector<DocumentChunk> chunks) : chunks_(std::move(chunks)) {
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        const auto& c = chunks_[i];
        if (!by_id_.emplace(c.chunk_id, i).second) {
            throw Error(Errc::format_error, "duplicate chunk id " + c.chunk_id);
        }
        auto it = first_by_doc_.find(c.doc_id);
        if (it == first_by_doc_.end()) {
            first_by_doc_.emplace(c.doc_id, i);
        } else if (c.ordinal < chunks_[it->second].ordinal) {
            it->second = i;
        }
    }
}

const DocumentChunk* ChunkStore::find(std::string_view chunk_id) const {
    auto it = by_id_.find(chunk_id);
    return it == by_id_.end() ? nullptr : &chunks_[it->second];
}

const DocumentChunk* ChunkStore::first_of(std::string_view doc_id) const {
    auto it = first_by_doc_.find(doc_id);
    return it == first_by_doc_.end() ? nullptr : &chunks_[it->second];
}

std::string ChunkStore::to_jsonl() const {
    std::string out;
    for (const auto& c : chunks_) {
        json j{{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"ordinal", c.ordinal},
               {"start", c.span.start}, {"end", c.span.end},    {"link", c.link},
               {"text", c.text}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

ChunkStore ChunkStore::from_jsonl(std::string_view text) {
    std::vector<DocumentChunk> chunks;
    std::size_t lineno = 0;
    for (const auto& line : split(text, '\n')) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            DocumentChunk c;
            c.chunk_id = j.at("chunk_id").get<std::string>();
            c.doc_id = j.at("doc_id").get<std::string>();
            c.ordinal = j.at("ordinal").get<std::size_t>();
            c.span = {j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
            c.link = j.at("link").get<std::string>();
            c.text = j.at("text").get<std::string>();
            chunks.push_back(std::move(c));
        } catch (const json::exception& e) {
            throw Error(Errc::format_error,
                        "chunks line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return ChunkStore(std::move(chunks));
}

} // namespace kba
