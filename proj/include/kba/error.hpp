#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kba {

/// Error categories shared by every module. The C API maps each one to a
/// stable status code, so append new values at the end only.
enum class Errc {
    invalid_argument = 1,
    invalid_config,
    corpus_not_found,
    empty_corpus,
    invalid_document,
    duplicate_keyword,
    empty_input,
    provider_error,
    provider_timeout,
    provider_contract_violation,
    model_mismatch,
    io_error,
    format_error,
    query_too_long,
    not_found,
    duplicate_record,
    validation_error,
    incomplete_matrix,
    incomplete_scores,
    empty_selection,
    illegal_transition,
    missing_signer,
    hook_unavailable,
    adapter_error,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// Raised by remote providers. Carries what a caller needs to decide on a retry.
class ProviderError : public Error {
public:
    ProviderError(Errc code, const std::string& message, int http_status = 0,
                  int attempts = 1, double retry_after_seconds = 0.0)
        : Error(code, message), http_status_(http_status), attempts_(attempts),
          retry_after_(retry_after_seconds) {}

    int http_status() const noexcept { return http_status_; }
    int attempts() const noexcept { return attempts_; }
    double retry_after_seconds() const noexcept { return retry_after_; }

private:
    int http_status_;
    int attempts_;
    double retry_after_;
};

} // namespace kba
