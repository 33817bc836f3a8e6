#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace kba {

std::string sha256_hex(std::string_view data);

std::string base64_encode(std::string_view data);
/// Accepts standard and URL-safe alphabets; padding and whitespace are optional.
std::string base64_decode(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
/// Writes through a sibling temp file and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Byte offsets of every code point start in `text`, plus text.size() at the end.
std::vector<std::size_t> utf8_boundaries(std::string_view text);
std::size_t utf8_length(std::string_view text);

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_ci(std::string_view s, std::string_view prefix);

std::string iso8601_utc(std::chrono::system_clock::time_point tp);
std::string now_iso8601();

/// Glob over '/'-separated paths: `**` spans directories, `*` and `?` stay within one segment.
bool glob_match(std::string_view pattern, std::string_view path);

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

} // namespace kba
