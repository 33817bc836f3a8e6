#include "kba/error.hpp"
#include "kba/generate.hpp"
#include "kba/util.hpp"

#include "mock_server.hpp"

#include <doctest.h>

using namespace kba;
using nlohmann::json;

namespace {

RerankedContext context_of(int n, std::size_t text_len = 40) {
    RerankedContext ctx;
    for (int i = 0; i < n; ++i) {
        RerankedItem it;
        it.chunk_id = "c" + std::to_string(i);
        it.link = "https://docs.example.org/p" + std::to_string(i) + ".html";
        it.text = std::string(text_len, static_cast<char>('a' + i));
        ctx.items.push_back(it);
    }
    return ctx;
}

} // namespace

TEST_CASE("token estimate is four bytes per token rounded up") {
    CHECK(estimate_tokens("") == 0);
    CHECK(estimate_tokens("a") == 1);
    CHECK(estimate_tokens("abcd") == 1);
    CHECK(estimate_tokens("abcde") == 2);
}

TEST_CASE("prompt lists blocks with links in rank order") {
    PromptTemplate t;
    auto b = assemble_prompt(context_of(3), "How?", t);
    CHECK(b.context_blocks.size() == 3);
    CHECK(b.dropped_blocks == 0);
    const auto p0 = b.user_message.find("[1] Source: https://docs.example.org/p0.html\n" + std::string(40, 'a'));
    const auto p2 = b.user_message.find("[3] Source: https://docs.example.org/p2.html");
    CHECK(p0 != std::string::npos);
    CHECK(p2 > p0);
    CHECK(b.user_message.rfind("Question:\nHow?") == b.user_message.size() - std::string("Question:\nHow?").size());
    CHECK(b.rendered == t.system_preamble + "\n\n" + b.user_message);
    CHECK(b.user_query == "How?");
}

TEST_CASE("over budget drops lowest-ranked blocks and never cuts the query") {
    PromptTemplate t;
    t.system_preamble = "sys";
    t.token_budget = 100000;
    // exactly enough room for the top two blocks
    t.token_budget = estimate_tokens(assemble_prompt(context_of(2, 100), "the question", t).rendered);
    auto b = assemble_prompt(context_of(4, 100), "the question", t);
    CHECK(b.dropped_blocks == 2);
    REQUIRE(b.context_blocks.size() == 2);
    CHECK(b.context_blocks[0].text[0] == 'a');
    CHECK(b.context_blocks[1].text[0] == 'b');
    CHECK(estimate_tokens(b.rendered) <= t.token_budget);
    CHECK(b.user_message.find("the question") != std::string::npos);

    t.token_budget = 2;
    try {
        assemble_prompt(context_of(1), "a question that is much too long", t);
        FAIL("expected query-too-long");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::query_too_long);
    }
    CHECK_THROWS_AS(assemble_baseline_prompt(" ", PromptTemplate{}), Error);
}

TEST_CASE("baseline prompt is preamble plus query") {
    PromptTemplate t;
    auto b = assemble_baseline_prompt("What is KSP?", t);
    CHECK(b.context_blocks.empty());
    CHECK(b.user_message == "What is KSP?");
    CHECK(b.rendered == t.system_preamble + "\n\nWhat is KSP?");
}

TEST_CASE("template json round trip and validation") {
    PromptTemplate t;
    t.token_budget = 123;
    auto back = PromptTemplate::from_json(t.to_json());
    CHECK(back.token_budget == 123);
    CHECK(back.system_preamble == t.system_preamble);
    CHECK_THROWS_AS(PromptTemplate::from_json(json{{"token_budget", 0}}), Error);
}

TEST_CASE("scripted provider lookup order: exact, rule, default") {
    PromptTemplate t;
    auto bundle = assemble_baseline_prompt("Explain KSPSolve please", t);
    auto p = ScriptedProvider::from_jsonl(
        "{\"model\": \"scripted/test\"}\n"
        "{\"contains\": \"KSPSolve\", \"answer\": \"rule\"}\n"
        "{\"default\": \"fallback\"}\n"
        "{\"prompt_sha256\": \"" + prompt_hash(bundle) + "\", \"answer\": \"exact\"}\n");
    CHECK(p->model_id() == "scripted/test");
    auto c = complete(bundle, *p);
    CHECK(c.answer == "exact");
    CHECK(c.model == "scripted/test");
    CHECK(c.provider_meta["match"] == "exact");
    CHECK(complete(assemble_baseline_prompt("About KSPSolve", t), *p).answer == "rule");
    CHECK(complete(assemble_baseline_prompt("Other", t), *p).answer == "fallback");
    CHECK(p->calls() == 3);

    ScriptedProvider empty;
    try {
        complete(bundle, empty);
        FAIL("expected provider error");
    } catch (const ProviderError& e) {
        CHECK(e.code() == Errc::provider_error);
    }
    CHECK_THROWS_AS(ScriptedProvider::from_jsonl("{\"what\": 1}"), Error);
    CHECK_THROWS_AS(ScriptedProvider::from_jsonl("not json"), Error);
}

TEST_CASE("scripted rules can ignore the context blocks") {
    PromptTemplate t;
    auto bundle = assemble_prompt(context_of(2), "Tell me about LSQR", t);
    ScriptedProvider p;
    p.add_rule("aaaa", "matched context");
    p.add_rule("LSQR", "matched question");
    CHECK(complete(bundle, p).answer == "matched context");
    p.set_question_marker(t.question_header);
    CHECK(complete(bundle, p).answer == "matched question");
    CHECK(complete(assemble_baseline_prompt("aaaa", t), p).answer == "matched context");
}

TEST_CASE("completion is timed and timeouts surface as provider-timeout") {
    ScriptedProvider p;
    p.set_default("ok");
    p.set_latency(std::chrono::milliseconds(30));
    auto c = complete(assemble_baseline_prompt("q", PromptTemplate{}), p);
    CHECK(c.llm_seconds >= 0.025);
    p.set_timeout(std::chrono::milliseconds(5));
    try {
        complete(assemble_baseline_prompt("q", PromptTemplate{}), p);
        FAIL("expected timeout");
    } catch (const ProviderError& e) {
        CHECK(e.code() == Errc::provider_timeout);
    }
}

TEST_CASE("answers are returned verbatim") {
    ScriptedProvider p;
    const std::string raw = "  ```c\nint x;\n```\n\n<b>raw</b>  \n";
    p.set_default(raw);
    CHECK(complete(assemble_baseline_prompt("q", PromptTemplate{}), p).answer == raw);
}

TEST_CASE("chat request serialization") {
    auto b = assemble_prompt(context_of(1), "q", PromptTemplate{});
    auto r = ChatRequest::from_bundle(b, "gpt-test", 0.2);
    auto j = r.to_json();
    CHECK(j["model"] == "gpt-test");
    CHECK(j["temperature"] == 0.2);
    REQUIRE(j["messages"].size() == 2);
    CHECK(j["messages"][0]["role"] == "system");
    CHECK(j["messages"][1]["content"] == b.user_message);
}

TEST_CASE("http chat provider against a local endpoint") {
    test::MockServer srv;
    int mode = 0;
    int calls = 0;
    json seen;
    srv.http().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        seen = json::parse(req.body);
        if (mode == 1 && calls == 1) {
            res.status = 429;
            res.set_header("Retry-After", "0");
            return;
        }
        if (mode == 2) {
            res.status = 400;
            res.set_content("{\"error\":\"bad\"}", "application/json");
            return;
        }
        if (mode == 3) {
            res.set_content("{\"choices\": []}", "application/json");
            return;
        }
        res.set_content(json{{"id", "cmpl-1"},
                             {"model", "gpt-served"},
                             {"choices", {{{"message", {{"role", "assistant"}, {"content", "**hi**"}}}}}},
                             {"usage", {{"total_tokens", 5}}}}
                            .dump(),
                        "application/json");
    });
    srv.start();
    HttpChatProvider p({srv.url("/v1/"), "gpt-test", "", 5.0, 2});
    auto bundle = assemble_baseline_prompt("hello", PromptTemplate{});
    auto c = complete(bundle, p, 0.0);
    CHECK(c.answer == "**hi**");
    CHECK(c.model == "gpt-served");
    CHECK(c.provider_meta["usage"]["total_tokens"] == 5);
    CHECK(seen["model"] == "gpt-test");

    mode = 1;
    calls = 0;
    CHECK(complete(bundle, p).answer == "**hi**");
    CHECK(calls == 2);

    mode = 2;
    try {
        complete(bundle, p);
        FAIL("expected provider error");
    } catch (const ProviderError& e) {
        CHECK(e.http_status() == 400);
        CHECK(e.attempts() == 1);
    }
    mode = 3;
    try {
        complete(bundle, p);
        FAIL("expected contract violation");
    } catch (const ProviderError& e) {
        CHECK(e.code() == Errc::provider_contract_violation);
    }

    HttpChatProvider dead({"http://127.0.0.1:1", "m", "", 1.0, 1});
    CHECK_THROWS_AS(complete(bundle, dead), ProviderError);
    CHECK_THROWS_AS(HttpChatProvider({"", "m", "", 1.0, 1}), Error);
}
