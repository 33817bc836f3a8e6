// Drives the kba executable as a user would.
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <sys/wait.h>

namespace {

struct Run {
    int code = -1;
    std::string out;
};

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

Run run(const std::string& args, bool merge_stderr = false) {
    const std::string cmd = quote(KBA_CLI_PATH) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string reports_config() { return quote((kba::test::fixtures() / "reports/config.json").string()); }

} // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("-c " + reports_config() + " ask 'x' --mode turbo").code == 2);
    CHECK(run("-c " + reports_config() + " report --compare baseline").code == 2);
    CHECK(run("--help").code == 0);
}

TEST_CASE("comparison report on the 37-question fixture") {
    auto r = run("-c " + reports_config() + " report --compare baseline rag_rerank");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("improved=25 unchanged=12 regressed=0") != std::string::npos);
    CHECK(r.out.find("score-4 count=33, score-3 count=4") != std::string::npos);

    r = run("-c " + reports_config() + " report --compare rag rag_rerank --scorer expert-1");
    CHECK(r.out.find("improved=11 unchanged=26 regressed=0") != std::string::npos);

    r = run("-c " + reports_config() + " report --compare baseline rag --csv");
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("question_id,baseline,rag,delta\n", 0) == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 38);

    r = run("-c " + reports_config() + " report --compare baseline rag_rerank --scorer nobody", true);
    CHECK(r.code == 1);
    CHECK(r.out.find("incomplete-scores") != std::string::npos);
}

TEST_CASE("latency report reproduces the timing table") {
    auto r = run("-c " + reports_config() + " report --latency");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("RAG time          0.16    3.11    0.44    0.48    5.71    1.05") != std::string::npos);
    CHECK(r.out.find("LLM response      2.74   16.47    9.56    2.28   15.62    9.63") != std::string::npos);
    CHECK(r.out.find("Baseline") == std::string::npos);

    r = run("-c " + reports_config() + " report --latency --csv");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("RAG time,0.16,3.11,0.44,0.48,5.71,1.05") != std::string::npos);
    CHECK(r.out.find("LLM response,2.74,16.47,9.56,2.28,15.62,9.63") != std::string::npos);
}

TEST_CASE("ingest, ask and score against the sample") {
    kba::test::TempDir dir;
    const auto cfg = quote(kba::test::copy_sample(dir.path()).string());
    auto r = run("-c " + cfg + " ask 'What does KSPSolve do?' --mode rag", true);
    CHECK(r.code == 1);
    CHECK(r.out.find("not-found") != std::string::npos);

    r = run("-c " + cfg + " ingest");
    REQUIRE(r.code == 0);
    r = run("-c " + cfg + " ask 'What does KSPSolve do?' --mode rag-rerank --id q01 --json");
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["mode"] == "rag_rerank");
    CHECK(j["context_blocks"] == 4);
    const std::string rec = j["record_id"];

    r = run("-c " + cfg + " ask 'What does KSPSolve do?' --mode baseline --html");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("<pre><code class=\"language-c\">") != std::string::npos);

    r = run("-c " + cfg + " score --scorer dana --record " + rec + " --value 4");
    CHECK(r.code == 0);
    r = run("-c " + cfg + " score --scorer dana --record " + rec + " --value 7");
    CHECK(r.code == 2);

    r = run("-c " + cfg + " bench " + quote((dir / "questions.jsonl").string()) + " --modes baseline,rag -j 2");
    CHECK(r.code == 0);
    const auto history = kba::test::slurp(dir / "history.jsonl");
    CHECK(std::count(history.begin(), history.end(), '\n') == 2 + 1 + 10);
}
