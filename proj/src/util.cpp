#include "kba/util.hpp"

#include "kba/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>
#include <unistd.h>

namespace kba {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_config: return "invalid-config";
    case Errc::corpus_not_found: return "corpus-not-found";
    case Errc::empty_corpus: return "empty-corpus";
    case Errc::invalid_document: return "invalid-document";
    case Errc::duplicate_keyword: return "duplicate-keyword";
    case Errc::empty_input: return "empty-input";
    case Errc::provider_error: return "provider-error";
    case Errc::provider_timeout: return "provider-timeout";
    case Errc::provider_contract_violation: return "provider-contract-violation";
    case Errc::model_mismatch: return "model-mismatch";
    case Errc::io_error: return "io-error";
    case Errc::format_error: return "format-error";
    case Errc::query_too_long: return "query-too-long";
    case Errc::not_found: return "not-found";
    case Errc::duplicate_record: return "duplicate-record";
    case Errc::validation_error: return "validation-error";
    case Errc::incomplete_matrix: return "incomplete-matrix";
    case Errc::incomplete_scores: return "incomplete-scores";
    case Errc::empty_selection: return "empty-selection";
    case Errc::illegal_transition: return "illegal-transition";
    case Errc::missing_signer: return "missing-signer";
    case Errc::hook_unavailable: return "hook-unavailable";
    case Errc::adapter_error: return "adapter-error";
    }
    return "unknown";
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
        throw Error(Errc::io_error, "sha256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string base64_encode(std::string_view data) {
    std::string out(4 * ((data.size() + 2) / 3), '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(data.data()), static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string base64_decode(std::string_view text) {
    std::string clean;
    clean.reserve(text.size() + 3);
    for (char c : text) {
        if (c == '-') {
            clean.push_back('+');
        } else if (c == '_') {
            clean.push_back('/');
        } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/') {
            clean.push_back(c);
        } else if (c == '=') {
            break;
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            throw Error(Errc::format_error, "malformed base64");
        }
    }
    const std::size_t payload = clean.size();
    while (clean.size() % 4 != 0) clean.push_back('=');
    if (payload % 4 == 1) throw Error(Errc::format_error, "malformed base64");
    std::string out(clean.size() / 4 * 3, '\0');
    int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
    if (n < 0) throw Error(Errc::format_error, "malformed base64");
    // EVP_DecodeBlock counts padding as zero bytes.
    const std::size_t pad = clean.size() - payload;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::io_error, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(Errc::io_error, "cannot write " + tmp.string());
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            throw Error(Errc::io_error, "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error(Errc::io_error, "cannot rename into " + path.string() + ": " + ec.message());
    }
}

std::vector<std::size_t> utf8_boundaries(std::string_view text) {
    std::vector<std::size_t> out;
    out.reserve(text.size() + 1);
    for (std::size_t i = 0; i < text.size(); ++i) {
        auto c = static_cast<unsigned char>(text[i]);
        if ((c & 0xC0) != 0x80) {
            out.push_back(i);
        }
    }
    out.push_back(text.size());
    return out;
}

std::size_t utf8_length(std::string_view text) {
    return static_cast<std::size_t>(std::count_if(text.begin(), text.end(), [](char ch) {
        return (static_cast<unsigned char>(ch) & 0xC0) != 0x80;
    }));
}

std::string trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return std::string(s);
}

std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i]))) {
            return false;
        }
    }
    return true;
}

std::string iso8601_utc(std::chrono::system_clock::time_point tp) {
    auto secs = std::chrono::time_point_cast<std::chrono::seconds>(tp);
    auto millis = std::chrono::duration_cast<std::chrono::milliseconds>(tp - secs).count();
    std::time_t t = std::chrono::system_clock::to_time_t(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<int>(millis));
    return buf;
}

std::string now_iso8601() { return iso8601_utc(std::chrono::system_clock::now()); }

namespace {

bool glob_impl(std::string_view p, std::string_view s) {
    while (!p.empty()) {
        if (p.substr(0, 2) == "**") {
            p.remove_prefix(2);
            // "**/" may also match zero directories.
            if (!p.empty() && p.front() == '/' && glob_impl(p.substr(1), s)) {
                return true;
            }
            for (std::size_t i = 0; i <= s.size(); ++i) {
                if (glob_impl(p, s.substr(i))) return true;
            }
            return false;
        }
        if (p.front() == '*') {
            p.remove_prefix(1);
            for (std::size_t i = 0; i <= s.size(); ++i) {
                if (glob_impl(p, s.substr(i))) return true;
                if (i < s.size() && s[i] == '/') break;
            }
            return false;
        }
        if (s.empty()) return false;
        if (p.front() == '?') {
            if (s.front() == '/') return false;
        } else if (p.front() != s.front()) {
            return false;
        }
        p.remove_prefix(1);
        s.remove_prefix(1);
    }
    return s.empty();
}

} // namespace

bool glob_match(std::string_view pattern, std::string_view path) { return glob_impl(pattern, path); }

} // namespace kba
