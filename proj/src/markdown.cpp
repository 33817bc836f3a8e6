#include "kba/markdown.hpp"

#include "kba/util.hpp"

#include <json.hpp>

#include <cctype>
#include <optional>

namespace kba {

std::string_view to_string(BlockKind kind) noexcept {
    switch (kind) {
    case BlockKind::paragraph: return "paragraph";
    case BlockKind::heading: return "heading";
    case BlockKind::list: return "list";
    case BlockKind::code: return "code";
    }
    return "paragraph";
}

std::size_t AnswerDocument::code_block_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.kind == BlockKind::code;
    return n;
}

bool AnswerDocument::has_unterminated_fence() const {
    for (const auto& b : blocks) {
        if (b.kind == BlockKind::code && b.unterminated) return true;
    }
    return false;
}

namespace {

struct Fence {
    char ch = '`';
    std::size_t count = 0;
    std::size_t indent = 0;
    std::string info;
};

struct Marker {
    std::size_t indent = 0;
    bool ordered = false;
    int number = 1;
    std::string content;
};

std::size_t leading_spaces(std::string_view line) {
    std::size_t n = 0;
    for (char c : line) {
        if (c == ' ') {
            ++n;
        } else if (c == '\t') {
            n += 4 - n % 4;
        } else {
            break;
        }
    }
    return n;
}

std::string_view ltrim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    return s;
}

bool is_blank(std::string_view line) { return ltrim(line).empty() || trim(line).empty(); }

std::optional<Fence> fence_open(std::string_view line) {
    auto rest = ltrim(line);
    if (rest.empty() || (rest.front() != '`' && rest.front() != '~')) return std::nullopt;
    Fence f;
    f.ch = rest.front();
    f.indent = leading_spaces(line);
    while (f.count < rest.size() && rest[f.count] == f.ch) ++f.count;
    if (f.count < 3) return std::nullopt;
    auto info = trim(rest.substr(f.count));
    if (f.ch == '`' && info.find('`') != std::string::npos) return std::nullopt;
    f.info = info;
    return f;
}

bool fence_closes(std::string_view line, const Fence& open) {
    auto rest = ltrim(line);
    std::size_t n = 0;
    while (n < rest.size() && rest[n] == open.ch) ++n;
    return n >= open.count && rest.substr(n).find_first_not_of(" \t") == std::string_view::npos;
}

std::optional<std::pair<int, std::string>> heading(std::string_view line) {
    if (leading_spaces(line) > 3) return std::nullopt;
    auto rest = ltrim(line);
    int level = 0;
    while (static_cast<std::size_t>(level) < rest.size() && rest[static_cast<std::size_t>(level)] == '#') ++level;
    if (level == 0 || level > 6) return std::nullopt;
    rest.remove_prefix(static_cast<std::size_t>(level));
    if (!rest.empty() && rest.front() != ' ' && rest.front() != '\t') return std::nullopt;
    std::string text = trim(rest);
    // optional closing sequence of #s
    auto end = text.find_last_not_of('#');
    if (end == std::string::npos) {
        text.clear();
    } else if (end + 1 < text.size() && (text[end] == ' ' || text[end] == '\t')) {
        text = trim(std::string_view(text).substr(0, end));
    }
    return std::make_pair(level, text);
}

std::optional<Marker> list_marker(std::string_view line) {
    Marker m;
    m.indent = leading_spaces(line);
    auto rest = ltrim(line);
    if (rest.empty()) return std::nullopt;
    std::size_t after = 0;
    if (rest.front() == '-' || rest.front() == '*' || rest.front() == '+') {
        after = 1;
    } else if (std::isdigit(static_cast<unsigned char>(rest.front()))) {
        std::size_t d = 0;
        while (d < rest.size() && d < 9 && std::isdigit(static_cast<unsigned char>(rest[d]))) ++d;
        if (d >= rest.size() || (rest[d] != '.' && rest[d] != ')')) return std::nullopt;
        m.ordered = true;
        m.number = std::stoi(std::string(rest.substr(0, d)));
        after = d + 1;
    } else {
        return std::nullopt;
    }
    if (after < rest.size() && rest[after] != ' ' && rest[after] != '\t') return std::nullopt;
    m.content = trim(rest.substr(after));
    return m;
}

bool starts_block(std::string_view line) {
    return fence_open(line) || heading(line) || list_marker(line);
}

class Parser {
public:
    explicit Parser(std::string_view text) {
        std::size_t start = 0;
        while (start < text.size()) {
            auto nl = text.find('\n', start);
            if (nl == std::string_view::npos) nl = text.size();
            std::string_view line = text.substr(start, nl - start);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            lines_.push_back(line);
            start = nl + 1;
        }
    }

    std::vector<Block> run() {
        std::vector<Block> blocks;
        std::size_t i = 0;
        while (i < lines_.size()) {
            const auto line = lines_[i];
            if (is_blank(line)) {
                ++i;
            } else if (auto f = fence_open(line)) {
                blocks.push_back(code(i, *f));
            } else if (auto h = heading(line)) {
                Block b;
                b.kind = BlockKind::heading;
                b.level = h->first;
                b.text = h->second;
                b.source = std::string(line);
                blocks.push_back(std::move(b));
                ++i;
            } else if (auto m = list_marker(line)) {
                blocks.push_back(list(i, *m));
            } else {
                blocks.push_back(paragraph(i));
            }
        }
        return blocks;
    }

private:
    std::string source(std::size_t from, std::size_t to) const {
        std::string out;
        for (std::size_t k = from; k < to; ++k) {
            if (k > from) out += '\n';
            out += lines_[k];
        }
        return out;
    }

    Block code(std::size_t& i, const Fence& f) {
        Block b;
        b.kind = BlockKind::code;
        b.language = f.info.substr(0, f.info.find_first_of(" \t"));
        const std::size_t begin = i++;
        bool closed = false;
        std::string body;
        while (i < lines_.size()) {
            if (fence_closes(lines_[i], f)) {
                closed = true;
                ++i;
                break;
            }
            auto line = lines_[i];
            std::size_t strip = std::min(f.indent, leading_spaces(line));
            std::size_t k = 0;
            while (strip > 0 && k < line.size() && line[k] == ' ') {
                ++k;
                --strip;
            }
            body += line.substr(k);
            body += '\n';
            ++i;
        }
        b.body = std::move(body);
        b.unterminated = !closed;
        b.source = source(begin, i);
        return b;
    }

    Block paragraph(std::size_t& i) {
        Block b;
        b.kind = BlockKind::paragraph;
        const std::size_t begin = i;
        std::string text;
        while (i < lines_.size() && !is_blank(lines_[i]) && (i == begin || !starts_block(lines_[i]))) {
            if (!text.empty()) text += '\n';
            text += trim(lines_[i]);
            ++i;
        }
        b.text = std::move(text);
        b.source = source(begin, i);
        return b;
    }

    Block list(std::size_t& i, const Marker& first) {
        Block b;
        b.kind = BlockKind::list;
        b.ordered = first.ordered;
        b.start = first.number;

        struct Level {
            std::size_t indent;
            std::vector<ListItem>* items;
        };
        std::vector<Level> stack{{first.indent, &b.items}};

        auto place = [&](const Marker& m) {
            while (stack.size() > 1 && m.indent < stack.back().indent) stack.pop_back();
            auto& top = stack.back();
            if (m.indent >= top.indent + 2 && !top.items->empty()) {
                ListItem& parent = top.items->back();
                if (parent.children.empty()) parent.children_ordered = m.ordered;
                stack.push_back({m.indent, &parent.children});
            }
            stack.back().items->push_back({m.content, false, {}});
        };

        const std::size_t begin = i;
        place(first);
        std::size_t last = i++;
        while (i < lines_.size()) {
            auto line = lines_[i];
            if (is_blank(line)) {
                std::size_t k = i;
                while (k < lines_.size() && is_blank(lines_[k])) ++k;
                if (k == lines_.size()) break;
                auto next = lines_[k];
                if (fence_open(next) || heading(next)) break;
                if (list_marker(next) || leading_spaces(next) >= stack.back().indent + 2) {
                    i = k;
                    continue;
                }
                break;
            }
            if (fence_open(line) || heading(line)) break;
            if (auto m = list_marker(line)) {
                place(*m);
            } else {
                auto& item = stack.back().items->back();
                if (!item.text.empty()) item.text += '\n';
                item.text += trim(line);
            }
            last = i++;
        }
        i = last + 1;
        b.source = source(begin, i);
        return b;
    }

    std::vector<std::string_view> lines_;
};

void append_escaped(std::string& out, char c) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    case '\'': out += "&#39;"; break;
    default: out += c;
    }
}

bool safe_url(std::string_view url) {
    auto lower = to_lower_ascii(url);
    if (lower.rfind("http://", 0) == 0 || lower.rfind("https://", 0) == 0 || lower.rfind("mailto:", 0) == 0) {
        return true;
    }
    auto colon = lower.find(':');
    auto stop = lower.find_first_of("/?#");
    return colon == std::string::npos || (stop != std::string::npos && stop < colon);
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

void render_list(std::string& out, const std::vector<ListItem>& items, bool ordered, int start) {
    if (ordered) {
        out += start == 1 ? "<ol>\n" : "<ol start=\"" + std::to_string(start) + "\">\n";
    } else {
        out += "<ul>\n";
    }
    for (const auto& item : items) {
        out += "<li>";
        out += render_inline(item.text);
        if (!item.children.empty()) {
            out += '\n';
            render_list(out, item.children, item.children_ordered, 1);
        }
        out += "</li>\n";
    }
    out += ordered ? "</ol>\n" : "</ul>\n";
}

} // namespace

AnswerDocument parse_answer(std::string_view markdown) {
    AnswerDocument doc;
    doc.raw_markdown = std::string(markdown);
    doc.blocks = Parser(markdown).run();
    doc.html = render_html(doc);
    return doc;
}

std::string html_escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) append_escaped(out, c);
    return out;
}

std::string render_inline(std::string_view t) {
    std::string out;
    std::size_t i = 0;
    const std::size_t n = t.size();
    while (i < n) {
        const char c = t[i];
        if (c == '\\' && i + 1 < n && std::ispunct(static_cast<unsigned char>(t[i + 1]))) {
            append_escaped(out, t[i + 1]);
            i += 2;
            continue;
        }
        if (c == '`') {
            std::size_t run = 0;
            while (i + run < n && t[i + run] == '`') ++run;
            std::size_t p = i + run;
            std::size_t close = std::string_view::npos;
            while (p < n) {
                if (t[p] == '`') {
                    std::size_t r = 0;
                    while (p + r < n && t[p + r] == '`') ++r;
                    if (r == run) {
                        close = p;
                        break;
                    }
                    p += r;
                } else {
                    ++p;
                }
            }
            if (close == std::string_view::npos) {
                out.append(t.substr(i, run));
                i += run;
                continue;
            }
            auto content = t.substr(i + run, close - i - run);
            if (content.size() >= 2 && content.front() == ' ' && content.back() == ' ') {
                content = content.substr(1, content.size() - 2);
            }
            out += "<code>" + html_escape(content) + "</code>";
            i = close + run;
            continue;
        }
        if (c == '[') {
            auto close = t.find(']', i + 1);
            if (close != std::string_view::npos && close + 1 < n && t[close + 1] == '(') {
                auto paren = t.find(')', close + 2);
                if (paren != std::string_view::npos) {
                    auto url = trim(t.substr(close + 2, paren - close - 2));
                    if (url.find_first_of(" \t\n") == std::string::npos) {
                        auto label = render_inline(t.substr(i + 1, close - i - 1));
                        if (safe_url(url)) {
                            out += "<a href=\"" + html_escape(url) + "\">" + label + "</a>";
                        } else {
                            out += label;
                        }
                        i = paren + 1;
                        continue;
                    }
                }
            }
        }
        if ((t.substr(i, 7) == "http://" || t.substr(i, 8) == "https://") && (i == 0 || !word_char(t[i - 1]))) {
            std::size_t e = i;
            while (e < n && !std::isspace(static_cast<unsigned char>(t[e])) && t[e] != '<' && t[e] != '>' &&
                   t[e] != '"' && t[e] != '`') {
                ++e;
            }
            while (e > i && std::string_view(".,;:!?)*_").find(t[e - 1]) != std::string_view::npos) --e;
            auto url = t.substr(i, e - i);
            out += "<a href=\"" + html_escape(url) + "\">" + html_escape(url) + "</a>";
            i = e;
            continue;
        }
        if (c == '*' || c == '_') {
            const bool left_ok = c == '*' || i == 0 || !word_char(t[i - 1]);
            if (left_ok && i + 1 < n && t[i + 1] == c) {
                const std::string delim(2, c);
                auto close = t.find(delim, i + 2);
                if (close != std::string_view::npos && close > i + 2 && t[i + 2] != ' ' &&
                    (c == '*' || close + 2 >= n || !word_char(t[close + 2]))) {
                    out += "<strong>" + render_inline(t.substr(i + 2, close - i - 2)) + "</strong>";
                    i = close + 2;
                    continue;
                }
            } else if (left_ok && i + 1 < n && t[i + 1] != ' ') {
                auto close = t.find(c, i + 1);
                while (close != std::string_view::npos && close + 1 < n && t[close + 1] == c) {
                    close = t.find(c, close + 2);
                }
                if (close != std::string_view::npos && close > i + 1 && t[close - 1] != ' ' &&
                    (c == '*' || close + 1 >= n || !word_char(t[close + 1]))) {
                    out += "<em>" + render_inline(t.substr(i + 1, close - i - 1)) + "</em>";
                    i = close + 1;
                    continue;
                }
            }
        }
        append_escaped(out, c);
        ++i;
    }
    return out;
}

std::string render_html(const AnswerDocument& doc) {
    std::string out;
    for (const auto& b : doc.blocks) {
        switch (b.kind) {
        case BlockKind::heading: {
            auto tag = "h" + std::to_string(b.level);
            out += "<" + tag + ">" + render_inline(b.text) + "</" + tag + ">\n";
            break;
        }
        case BlockKind::paragraph:
            out += "<p>" + render_inline(b.text) + "</p>\n";
            break;
        case BlockKind::list:
            render_list(out, b.items, b.ordered, b.start);
            break;
        case BlockKind::code:
            out += "<pre><code";
            if (!b.language.empty()) out += " class=\"language-" + html_escape(b.language) + "\"";
            if (b.unterminated) out += " data-unterminated=\"true\"";
            out += ">" + html_escape(b.body) + "</code></pre>\n";
            break;
        }
    }
    return out;
}

std::string unwrap_json_answer(std::string_view text, std::string_view field) {
    if (field.empty()) return std::string(text);
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_object()) {
        auto it = j.find(std::string(field));
        if (it != j.end() && it->is_string()) return it->get<std::string>();
    }
    return std::string(text);
}

std::string_view to_string(CheckStatus status) noexcept {
    switch (status) {
    case CheckStatus::not_run: return "not_run";
    case CheckStatus::passed: return "passed";
    case CheckStatus::failed: return "failed";
    }
    return "not_run";
}

} // namespace kba
