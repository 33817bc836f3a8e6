#pragma once

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace kba::detail {

struct HttpRequestOptions {
    double timeout_seconds = 30.0;
    int max_attempts = 1;
    double backoff_seconds = 0.5;
    std::string bearer_env; // env var with a bearer token; empty for none
    std::vector<std::pair<std::string, std::string>> headers;
};

/// POSTs JSON to base_url + path and returns the parsed JSON body. Retries
/// connection failures, 429 and 5xx with exponential backoff. Throws
/// ProviderError (provider-timeout / provider-error) on failure.
nlohmann::json post_json(const std::string& base_url, const std::string& path,
                         const nlohmann::json& body, const HttpRequestOptions& options);

/// Splits "https://host:port/prefix" into ("https://host:port", "/prefix").
std::pair<std::string, std::string> split_base_url(const std::string& base_url);

} // namespace kba::detail
