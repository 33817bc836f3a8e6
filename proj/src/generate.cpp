#include "kba/generate.hpp"

#include "http_client.hpp"
#include "kba/error.hpp"
#include "kba/util.hpp"

#include <thread>

namespace kba {

using nlohmann::json;

PromptTemplate PromptTemplate::from_json(const json& j) {
    PromptTemplate t;
    t.system_preamble = j.value("system_preamble", t.system_preamble);
    t.context_header = j.value("context_header", t.context_header);
    t.question_header = j.value("question_header", t.question_header);
    t.token_budget = j.value("token_budget", t.token_budget);
    if (t.token_budget == 0) {
        throw Error(Errc::invalid_config, "token_budget must be positive");
    }
    return t;
}

json PromptTemplate::to_json() const {
    return {{"system_preamble", system_preamble},
            {"context_header", context_header},
            {"question_header", question_header},
            {"token_budget", token_budget}};
}

std::size_t estimate_tokens(std::string_view text) noexcept { return (text.size() + 3) / 4; }

namespace {

std::string render_user_message(const std::vector<ContextBlock>& blocks, std::string_view query,
                                const PromptTemplate& tmpl) {
    std::string out;
    if (!blocks.empty()) {
        out += tmpl.context_header;
        out += "\n\n";
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            out += "[" + std::to_string(i + 1) + "] Source: " + blocks[i].link + "\n";
            out += blocks[i].text;
            out += "\n\n";
        }
        out += tmpl.question_header;
        out += "\n";
    }
    out += query;
    return out;
}

PromptBundle finish(std::vector<ContextBlock> blocks, std::string_view query, const PromptTemplate& tmpl) {
    if (trim(query).empty()) {
        throw Error(Errc::empty_input, "query is empty");
    }
    PromptBundle b;
    b.system_preamble = tmpl.system_preamble;
    b.user_query = std::string(query);
    b.token_budget = tmpl.token_budget;

    auto render = [&](const std::vector<ContextBlock>& bl) {
        return tmpl.system_preamble + "\n\n" + render_user_message(bl, query, tmpl);
    };
    if (estimate_tokens(render({})) > tmpl.token_budget) {
        throw Error(Errc::query_too_long, "query alone exceeds the token budget of " +
                                              std::to_string(tmpl.token_budget));
    }
    while (!blocks.empty() && estimate_tokens(render(blocks)) > tmpl.token_budget) {
        blocks.pop_back();
        ++b.dropped_blocks;
    }
    b.user_message = render_user_message(blocks, query, tmpl);
    b.rendered = tmpl.system_preamble + "\n\n" + b.user_message;
    b.context_blocks = std::move(blocks);
    return b;
}

} // namespace

PromptBundle assemble_prompt(const RerankedContext& context, std::string_view query,
                             const PromptTemplate& tmpl) {
    std::vector<ContextBlock> blocks;
    blocks.reserve(context.items.size());
    for (const auto& item : context.items) blocks.push_back({item.link, item.text});
    return finish(std::move(blocks), query, tmpl);
}

PromptBundle assemble_baseline_prompt(std::string_view query, const PromptTemplate& tmpl) {
    return finish({}, query, tmpl);
}

json ChatRequest::to_json() const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"model", model}, {"messages", msgs}, {"temperature", temperature}};
}

ChatRequest ChatRequest::from_bundle(const PromptBundle& bundle, std::string model, double temperature) {
    ChatRequest r;
    r.model = std::move(model);
    r.temperature = temperature;
    r.messages.push_back({"system", bundle.system_preamble});
    r.messages.push_back({"user", bundle.user_message});
    return r;
}

HttpChatProvider::HttpChatProvider(HttpChatOptions options) : options_(std::move(options)) {
    if (options_.base_url.empty() || options_.model.empty()) {
        throw Error(Errc::invalid_config, "http chat provider needs base_url and model");
    }
}

ChatResponse HttpChatProvider::chat(const ChatRequest& request) {
    detail::HttpRequestOptions opts;
    opts.timeout_seconds = options_.timeout_seconds;
    opts.max_attempts = options_.max_attempts;
    opts.bearer_env = options_.api_key_env;
    auto res = detail::post_json(options_.base_url, "/chat/completions", request.to_json(), opts);
    try {
        ChatResponse out;
        out.text = res.at("choices").at(0).at("message").at("content").get<std::string>();
        out.model = res.value("model", options_.model);
        if (res.contains("usage")) out.meta["usage"] = res["usage"];
        if (res.contains("id")) out.meta["id"] = res["id"];
        return out;
    } catch (const json::exception& e) {
        throw ProviderError(Errc::provider_contract_violation,
                            std::string("malformed chat completion response: ") + e.what());
    }
}

std::string prompt_hash(const PromptBundle& bundle) {
    return sha256_hex(bundle.system_preamble + "\n\n" + bundle.user_message);
}

std::unique_ptr<ScriptedProvider> ScriptedProvider::from_jsonl(std::string_view text) {
    auto p = std::make_unique<ScriptedProvider>();
    std::size_t lineno = 0;
    for (const auto& line : split(text, '\n')) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            if (j.contains("prompt_sha256")) {
                p->add_exact(j.at("prompt_sha256").get<std::string>(), j.at("answer").get<std::string>());
            } else if (j.contains("contains")) {
                p->add_rule(j.at("contains").get<std::string>(), j.at("answer").get<std::string>());
            } else if (j.contains("default")) {
                p->set_default(j.at("default").get<std::string>());
            } else if (j.contains("model")) {
                p->set_model_id(j.at("model").get<std::string>());
            } else {
                throw Error(Errc::format_error, "unrecognized fixture entry");
            }
        } catch (const json::exception& e) {
            throw Error(Errc::format_error, "scripted fixture line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return p;
}

std::unique_ptr<ScriptedProvider> ScriptedProvider::from_file(const std::filesystem::path& path) {
    return from_jsonl(read_text_file(path));
}

void ScriptedProvider::add_exact(std::string prompt_sha256, std::string answer) {
    exact_[std::move(prompt_sha256)] = std::move(answer);
}

void ScriptedProvider::add_rule(std::string contains, std::string answer) {
    rules_.push_back({std::move(contains), std::move(answer)});
}

std::size_t ScriptedProvider::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

ChatResponse ScriptedProvider::chat(const ChatRequest& request) {
    {
        std::lock_guard lock(mu_);
        ++calls_;
    }
    if (timeout_ && latency_ > *timeout_) {
        std::this_thread::sleep_for(*timeout_);
        throw ProviderError(Errc::provider_timeout, "scripted provider timed out after " +
                                                        std::to_string(timeout_->count()) + " ms");
    }
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

    std::string system;
    std::string user;
    for (const auto& m : request.messages) {
        if (m.role == "system") system = m.content;
        if (m.role == "user") user = m.content;
    }
    ChatResponse out;
    out.model = model_id_;
    if (auto it = exact_.find(sha256_hex(system + "\n\n" + user)); it != exact_.end()) {
        out.text = it->second;
        out.meta["match"] = "exact";
        return out;
    }
    std::string_view target = user;
    if (!question_marker_.empty()) {
        if (auto pos = user.rfind(question_marker_); pos != std::string::npos) {
            target.remove_prefix(pos + question_marker_.size());
        }
    }
    for (const auto& r : rules_) {
        if (target.find(r.contains) != std::string_view::npos) {
            out.text = r.answer;
            out.meta["match"] = "contains:" + r.contains;
            return out;
        }
    }
    if (default_answer_) {
        out.text = *default_answer_;
        out.meta["match"] = "default";
        return out;
    }
    throw ProviderError(Errc::provider_error, "scripted provider has no answer for this prompt", 404);
}

Completion complete(const PromptBundle& bundle, ContinuationProvider& provider, double temperature) {
    auto request = ChatRequest::from_bundle(bundle, provider.model_id(), temperature);
    Stopwatch sw;
    auto response = provider.chat(request);
    Completion c;
    c.llm_seconds = sw.seconds();
    c.answer = std::move(response.text);
    c.model = response.model.empty() ? provider.model_id() : response.model;
    c.provider_meta = std::move(response.meta);
    return c;
}

} // namespace kba
