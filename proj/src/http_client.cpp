#include "http_client.hpp"
#include "kba/util.hpp"

#include "kba/error.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace kba::detail {

using nlohmann::json;

std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(Errc::invalid_config, "base URL needs a scheme: " + base_url);
    }
    auto path_start = base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {base_url, ""};
    }
    std::string prefix = base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base_url.substr(0, path_start), prefix};
}

namespace {

std::string excerpt(const std::string& body) {
    constexpr std::size_t max_len = 200;
    return body.size() <= max_len ? body : body.substr(0, max_len) + "...";
}

bool is_timeout(httplib::Error err) {
    return err == httplib::Error::Read || err == httplib::Error::Write ||
           err == httplib::Error::ConnectionTimeout;
}

} // namespace

json post_json(const std::string& base_url, const std::string& path, const json& body,
               const HttpRequestOptions& options) {
    auto [origin, prefix] = split_base_url(base_url);
    httplib::Client client(origin);
    auto secs = std::chrono::duration<double>(options.timeout_seconds);
    auto to = std::chrono::duration_cast<std::chrono::microseconds>(secs);
    client.set_connection_timeout(to);
    client.set_read_timeout(to);
    client.set_write_timeout(to);

    httplib::Headers headers;
    for (const auto& [k, v] : options.headers) headers.emplace(k, v);
    if (!options.bearer_env.empty()) {
        const char* token = std::getenv(options.bearer_env.c_str());
        if (token == nullptr || *token == '\0') {
            throw ProviderError(Errc::provider_error,
                                "credential env var " + options.bearer_env + " is not set");
        }
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    const std::string payload = body.dump();
    const int attempts = std::max(1, options.max_attempts);
    double wait = options.backoff_seconds;
    for (int attempt = 1;; ++attempt) {
        auto res = client.Post(prefix + path, headers, payload, "application/json");
        double retry_after = 0.0;
        if (!res) {
            auto err = res.error();
            if (is_timeout(err)) {
                throw ProviderError(Errc::provider_timeout,
                                    "request to " + origin + prefix + path + " timed out after " +
                                        std::to_string(options.timeout_seconds) + " s",
                                    0, attempt);
            }
            if (attempt >= attempts) {
                throw ProviderError(Errc::provider_error,
                                    "request to " + origin + prefix + path +
                                        " failed: " + httplib::to_string(err),
                                    0, attempt, wait);
            }
        } else if (res->status >= 200 && res->status < 300) {
            if (trim(res->body).empty()) return json::object();
            try {
                return json::parse(res->body);
            } catch (const json::exception& e) {
                throw ProviderError(Errc::provider_contract_violation,
                                    "provider returned invalid JSON: " + excerpt(res->body),
                                    res->status, attempt);
            }
        } else {
            const bool retryable = res->status == 429 || res->status >= 500;
            if (res->has_header("Retry-After")) {
                retry_after = std::atof(res->get_header_value("Retry-After").c_str());
            }
            if (!retryable || attempt >= attempts) {
                throw ProviderError(Errc::provider_error,
                                    "provider returned HTTP " + std::to_string(res->status) + ": " +
                                        excerpt(res->body),
                                    res->status, attempt, retry_after);
            }
        }
        const double delay = std::max(wait, retry_after);
        spdlog::warn("provider request attempt {}/{} failed; retrying in {:.2f} s", attempt, attempts,
                     delay);
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        wait *= 2.0;
    }
}

} // namespace kba::detail
