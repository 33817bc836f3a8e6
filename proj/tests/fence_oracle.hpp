#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace kba::test {

struct FenceCount {
    std::size_t opened = 0;
    bool unterminated = false;
};

/// Line scanner for fenced code: three or more backticks or tildes open a
/// block (a backtick fence may not carry a backtick in its info string); a
/// line of at least as many of the same character closes it.
inline FenceCount count_fences(std::string_view text) {
    FenceCount fc;
    bool inside = false;
    char ch = 0;
    std::size_t len = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        std::size_t i = 0;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        const char c = i < line.size() ? line[i] : '\0';
        std::size_t run = 0;
        while (i + run < line.size() && line[i + run] == c) ++run;
        auto rest = line.substr(i + run);
        const bool rest_blank = rest.find_first_not_of(" \t") == std::string_view::npos;
        if (inside) {
            if (c == ch && run >= len && rest_blank) inside = false;
        } else if ((c == '`' || c == '~') && run >= 3 && !(c == '`' && rest.find('`') != std::string_view::npos)) {
            inside = true;
            ch = c;
            len = run;
            ++fc.opened;
        }
        if (nl == text.size()) break;
        start = nl + 1;
    }
    fc.unterminated = inside;
    return fc;
}

/// Markdown-ish noise heavy on fence lines, list markers and headings.
inline std::string random_markdown(std::mt19937_64& rng) {
    static const std::vector<std::string> pieces{
        "```", "```c", "```python extra", "~~~", "~~~~", "````", "``", "``` a`b", "   ```", "\t```sh",
        "- item", "* item", "  - nested", "1. first", "2) second", "# Title", "###### deep", "####### not",
        "plain text with `code` and **bold**", "", "", "> quoted", "[link](javascript:x)", "<script>",
        "    indented", "text ``` inline", "~~~ ~~~", "```   ", "-", "10.", "\xc3\xa9\xe2\x80\x96", "\r"};
    std::string out;
    const int n = static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) {
        if (rng() % 17 == 0) {
            const int junk = 1 + static_cast<int>(rng() % 6);
            for (int j = 0; j < junk; ++j) out += static_cast<char>(rng() % 256);
        } else {
            out += pieces[rng() % pieces.size()];
        }
        if (rng() % 9 != 0) out += '\n';
    }
    return out;
}

} // namespace kba::test
