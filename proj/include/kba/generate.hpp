#pragma once

#include "kba/rerank.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace kba {

struct PromptTemplate {
    std::string system_preamble =
        "You are an assistant for the library's users. Answer using the documentation "
        "excerpts provided, cite the source links you relied on, and say so plainly when "
        "the documentation does not cover the question. Format the answer in Markdown.";
    std::string context_header = "Documentation excerpts:";
    std::string question_header = "Question:";
    /// Approximate token budget for the rendered prompt (see estimate_tokens).
    std::size_t token_budget = 8000;

    static PromptTemplate from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Four bytes per token, rounded up. Deliberately provider-neutral.
std::size_t estimate_tokens(std::string_view text) noexcept;

struct ContextBlock {
    std::string link;
    std::string text;
};

struct PromptBundle {
    std::string system_preamble;
    std::vector<ContextBlock> context_blocks;
    std::string user_query;
    /// Everything after the preamble; sent as the user message.
    std::string user_message;
    /// preamble + blank line + user_message.
    std::string rendered;
    std::size_t token_budget = 0;
    /// Blocks removed to fit the budget, lowest-ranked first.
    std::size_t dropped_blocks = 0;
};

/// Serializes context blocks with their links in rank order. Over budget,
/// blocks are dropped from the bottom; the query is never cut.
PromptBundle assemble_prompt(const RerankedContext& context, std::string_view query,
                             const PromptTemplate& tmpl);
/// No-RAG baseline: preamble plus query only.
PromptBundle assemble_baseline_prompt(std::string_view query, const PromptTemplate& tmpl);

struct TimingBreakdown {
    double rag_seconds = 0.0;
    double llm_seconds = 0.0;
    double total_seconds = 0.0;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

/// OpenAI-style chat completion request.
struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;

    nlohmann::json to_json() const;
    static ChatRequest from_bundle(const PromptBundle& bundle, std::string model, double temperature);
};

struct ChatResponse {
    std::string text;
    std::string model;
    nlohmann::json meta = nlohmann::json::object();
};

class ContinuationProvider {
public:
    virtual ~ContinuationProvider() = default;

    virtual std::string model_id() const = 0;
    virtual ChatResponse chat(const ChatRequest& request) = 0;
};

struct HttpChatOptions {
    std::string base_url;
    std::string model;
    std::string api_key_env;
    double timeout_seconds = 60.0;
    int max_attempts = 2;
};

/// `POST {base}/chat/completions`, reading choices[0].message.content.
class HttpChatProvider final : public ContinuationProvider {
public:
    explicit HttpChatProvider(HttpChatOptions options);

    std::string model_id() const override { return options_.model; }
    ChatResponse chat(const ChatRequest& request) override;

private:
    HttpChatOptions options_;
};

/// Replays canned answers. Lookup order: exact prompt hash, first matching
/// substring rule, then the default answer.
class ScriptedProvider final : public ContinuationProvider {
public:
    struct Rule {
        std::string contains;
        std::string answer;
    };

    ScriptedProvider() = default;

    /// JSONL lines of {"prompt_sha256", "answer"}, {"contains", "answer"} or {"default"}.
    static std::unique_ptr<ScriptedProvider> from_jsonl(std::string_view text);
    static std::unique_ptr<ScriptedProvider> from_file(const std::filesystem::path& path);

    void add_exact(std::string prompt_sha256, std::string answer);
    void add_rule(std::string contains, std::string answer);
    void set_default(std::string answer) { default_answer_ = std::move(answer); }
    /// Simulated round-trip time; exceeding `timeout` raises provider-timeout.
    void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }
    void set_timeout(std::chrono::milliseconds timeout) { timeout_ = timeout; }
    void set_model_id(std::string id) { model_id_ = std::move(id); }
    /// Substring rules then look only at the text after the last occurrence of
    /// this header, so retrieved context cannot trigger them.
    void set_question_marker(std::string marker) { question_marker_ = std::move(marker); }

    std::string model_id() const override { return model_id_; }
    ChatResponse chat(const ChatRequest& request) override;

    /// Number of chat() calls served so far.
    std::size_t calls() const;

private:
    std::string model_id_ = "scripted/replay-v1";
    std::string question_marker_;
    std::map<std::string, std::string> exact_;
    std::vector<Rule> rules_;
    std::optional<std::string> default_answer_;
    std::chrono::milliseconds latency_{0};
    std::optional<std::chrono::milliseconds> timeout_;
    mutable std::mutex mu_;
    std::size_t calls_ = 0;
};

/// Prompt text that scripted fixtures hash: system + user message contents.
std::string prompt_hash(const PromptBundle& bundle);

struct Completion {
    std::string answer;
    double llm_seconds = 0.0;
    std::string model;
    nlohmann::json provider_meta = nlohmann::json::object();
};

/// Calls the provider and times the round trip. The answer is returned verbatim.
Completion complete(const PromptBundle& bundle, ContinuationProvider& provider, double temperature = 0.0);

} // namespace kba
