#include "kba/engine.hpp"
#include "kba/server.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

using namespace kba;
using nlohmann::json;

namespace {

struct Fixture {
    test::TempDir dir;
    std::unique_ptr<Engine> engine;
    std::unique_ptr<Service> service;
    int port = 0;

    Fixture() {
        const auto cfg = test::copy_sample(dir.path());
        auto j = json::parse(test::slurp(cfg));
        j["gateway"] = {{"adapter", "fake"}};
        test::spit(cfg, j.dump());
        engine = Engine::open(cfg);
        engine->ingest();
        ServerOptions o;
        o.port = 0;
        o.poll_interval = std::chrono::milliseconds(0);
        o.keepalive = std::chrono::milliseconds(500);
        service = std::make_unique<Service>(*engine, o);
        port = service->start();
    }
    ~Fixture() { service->stop(); }

    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(10, 0);
        return c;
    }
    std::pair<int, json> get(const std::string& path) const {
        auto r = client().Get(path);
        REQUIRE(r);
        return {r->status, json::parse(r->body)};
    }
    std::pair<int, json> post(const std::string& path, const json& body) const {
        auto r = client().Post(path, body.dump(), "application/json");
        REQUIRE(r);
        return {r->status, json::parse(r->body)};
    }
};

} // namespace

TEST_CASE("health, rubric and unknown routes") {
    Fixture f;
    auto [s, j] = f.get("/v1/health");
    CHECK(s == 200);
    CHECK(j["status"] == "ok");
    std::tie(s, j) = f.get("/v1/rubric");
    REQUIRE(j["rubric"].size() == 5);
    CHECK(j["rubric"][4]["label"] == "Ideal answer, close to what an expert would respond");
    std::tie(s, j) = f.get("/v1/nothing");
    CHECK(s == 404);
    CHECK(j["error"] == "not-found");
}

TEST_CASE("review workflow over HTTP") {
    Fixture f;
    auto [s, j] = f.post("/v1/inbound", {{"message_id", "m1"},
                                         {"from", "User <user@example.org>"},
                                         {"subject", "Preallocation"},
                                         {"body", "Is my matrix preallocated correctly?"}});
    CHECK(s == 201);
    const std::string id = j["thread_id"];
    std::tie(s, j) = f.post("/v1/inbound", {{"message_id", "m1"}, {"from", "user@example.org"}, {"body", "dup"}});
    CHECK(s == 200);
    CHECK(j["accepted"] == false);

    std::tie(s, j) = f.get("/v1/threads?state=incoming");
    REQUIRE(j["threads"].size() == 1);
    CHECK(j["threads"][0]["thread_id"] == id);

    std::tie(s, j) = f.post("/v1/threads/" + id + "/action", {{"action", "send"}, {"actor", "Dana"}});
    CHECK(s == 409);
    CHECK(j["error"] == "illegal-transition");

    std::tie(s, j) = f.post("/v1/threads/" + id + "/draft", json::object());
    CHECK(s == 200);
    CHECK(j["state"] == "drafted");
    CHECK(j["draft"]["context"].size() == 4);
    CHECK(j["draft"]["text"].get<std::string>().find("-info") != std::string::npos);
    const std::string record_id = j["draft"]["record_id"];

    std::tie(s, j) = f.post("/v1/threads/" + id + "/action", {{"action", "send"}});
    CHECK(s == 422);
    CHECK(j["error"] == "missing-signer");
    std::tie(s, j) = f.post("/v1/threads/" + id + "/action", {{"action", "teleport"}});
    CHECK(s == 400);
    std::tie(s, j) = f.post("/v1/threads/" + id + "/action", {{"action", "send"}, {"actor", "Dana"}});
    CHECK(s == 200);
    CHECK(j["state"] == "sent");
    CHECK(j["outcome"]["signer"] == "Dana");

    auto& fake = dynamic_cast<FakeAdapter&>(f.service->adapter());
    CHECK(fake.deliveries().size() == 1);

    std::tie(s, j) = f.get("/v1/records/" + record_id);
    CHECK(s == 200);
    CHECK(j["thread_id"] == id);
    std::tie(s, j) = f.get("/v1/records?thread_id=" + id);
    CHECK(j["records"].size() == 1);
    CHECK_FALSE(j["records"][0].contains("rendered_prompt"));
    std::tie(s, j) = f.get("/v1/threads/th-none");
    CHECK(s == 404);
}

TEST_CASE("direct ask is watermarked") {
    Fixture f;
    auto [s, j] = f.post("/v1/ask", {{"question", "What does KSPSolve do?"}});
    CHECK(s == 200);
    CHECK(j["unvetted"] == true);
    CHECK(j["answer"].get<std::string>().rfind("[Unreviewed answer", 0) == 0);
    CHECK(j["html"].get<std::string>().find("<code>KSPSolve()</code>") != std::string::npos);
    std::tie(s, j) = f.post("/v1/ask", json::object());
    CHECK(s == 400);
    auto r = f.client().Post("/v1/ask", "{oops", "application/json");
    CHECK(r->status == 400);
}

TEST_CASE("blind scoring sessions over HTTP") {
    Fixture f;
    for (const char* mode : {"baseline", "rag"}) {
        AskOptions o;
        o.mode = ask_mode_from_string(mode);
        o.question_id = "q01";
        f.engine->ask("What does KSPSolve do?", o);
    }
    auto [s, j] = f.post("/v1/sessions", {{"question_ids", {"q01", "q02"}}, {"configs", {"baseline", "rag"}}});
    CHECK(s == 422);
    CHECK(j["error"] == "incomplete-matrix");

    std::tie(s, j) = f.post("/v1/sessions", {{"question_ids", {"q01"}}, {"configs", {"baseline", "rag"}}, {"seed", 3}});
    CHECK(s == 201);
    const auto body = j.dump();
    CHECK(body.find("config_label") == std::string::npos);
    CHECK(body.find("scripted/") == std::string::npos);
    CHECK(body.find("hash-ngram") == std::string::npos);
    const std::string sid = j["session_id"];
    REQUIRE(j["items"].size() == 2);
    const std::string item = j["items"][0]["item_id"];

    std::tie(s, j) = f.post("/v1/scores", {{"session_id", sid}, {"item_id", item}, {"value", 5}, {"scorer_id", "x"}});
    CHECK(s == 400);
    std::tie(s, j) = f.post("/v1/scores", {{"session_id", sid}, {"item_id", item}, {"value", 3}, {"scorer_id", "x"}});
    CHECK(s == 201);
    CHECK(j["blind"] == true);
    CHECK(j["scored"] == 1);
    std::tie(s, j) = f.get("/v1/sessions/" + sid);
    CHECK(j["scored"] == 1);
    std::tie(s, j) = f.post("/v1/scores", {{"session_id", "nope"}, {"item_id", item}, {"value", 3}, {"scorer_id", "x"}});
    CHECK(s == 404);
}

TEST_CASE("event stream delivers gateway events in order") {
    Fixture f;
    std::string received;
    std::atomic<bool> done{false};
    std::thread reader([&] {
        auto c = f.client();
        c.Get("/v1/events?after=0", [&](const char* data, std::size_t n) {
            received.append(data, n);
            if (received.find("event: thread.drafted") != std::string::npos) {
                done = true;
                return false;
            }
            return true;
        });
        done = true;
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    auto [s, j] = f.post("/v1/inbound", {{"from", "u@example.org"}, {"subject", "Events"}, {"body", "hello"}});
    const std::string id = j["thread_id"];
    f.post("/v1/threads/" + id + "/draft", json::object());
    for (int i = 0; i < 100 && !done; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    reader.join();
    const auto created = received.find("event: thread.created");
    const auto drafted = received.find("event: thread.drafted");
    REQUIRE(created != std::string::npos);
    REQUIRE(drafted != std::string::npos);
    CHECK(created < drafted);
    CHECK(received.find("id: 1\n") != std::string::npos);
    CHECK(received.find("\"thread_id\":\"" + id + "\"") != std::string::npos);
}
