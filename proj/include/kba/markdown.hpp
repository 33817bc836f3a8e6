#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <vector>

namespace kba {

enum class BlockKind { paragraph, heading, list, code };

std::string_view to_string(BlockKind kind) noexcept;

struct ListItem {
    std::string text;
    bool children_ordered = false;
    std::vector<ListItem> children;
};

struct Block {
    BlockKind kind = BlockKind::paragraph;
    /// Paragraph or heading text.
    std::string text;
    int level = 0;

    bool ordered = false;
    int start = 1;
    std::vector<ListItem> items;

    std::string language;
    std::string body;
    bool unterminated = false;

    /// The raw input lines this block was parsed from.
    std::string source;
};

struct AnswerDocument {
    std::string raw_markdown;
    std::vector<Block> blocks;
    std::string html;

    std::size_t code_block_count() const;
    bool has_unterminated_fence() const;
};

/// CommonMark subset: ATX headings, paragraphs, `-`/`*`/`+` and numbered
/// lists (nested by indentation), fenced code. Never fails; an unclosed fence
/// runs to end of input and is flagged.
AnswerDocument parse_answer(std::string_view markdown);

/// Escapes all raw text; links keep only http(s), mailto and relative targets.
std::string render_html(const AnswerDocument& doc);
std::string render_inline(std::string_view text);
std::string html_escape(std::string_view text);

/// When the provider answers in JSON, pulls the Markdown out of `field`.
/// Returns the input unchanged if it is not a JSON object carrying that field.
std::string unwrap_json_answer(std::string_view text, std::string_view field);

enum class CheckStatus { not_run, passed, failed };

std::string_view to_string(CheckStatus status) noexcept;

struct CodeCheckResult {
    std::size_t block_index = 0;
    CheckStatus status = CheckStatus::not_run;
    std::string diagnostics;
    int exit_code = -1;
};

struct CodeCheckHook {
    /// Shell command; `{file}` becomes the quoted path of the extracted block
    /// and `{lang}` its language tag. Empty disables checking.
    std::string command;
    std::chrono::milliseconds timeout{30000};
};

/// Runs the hook once per code block, serially. Exit status 0 means passed.
/// A hook whose program cannot be found yields not_run for every block.
std::vector<CodeCheckResult> check_code(const AnswerDocument& doc, const CodeCheckHook& hook);

} // namespace kba
