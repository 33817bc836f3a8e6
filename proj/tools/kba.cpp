// kba: operator CLI. Talks to the engine only through the C API.

#include "kba/kba.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>

using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Failure {
    kba_status status;
    std::string message;
};

void check(kba_status s) {
    if (s != KBA_OK) throw Failure{s, kba_last_error()};
}

std::string take(char* p) {
    std::string s = p ? p : "";
    kba_free(p);
    return s;
}

struct EngineHandle {
    kba_engine* h = nullptr;
    explicit EngineHandle(const std::string& path) { check(kba_engine_open(path.c_str(), &h)); }
    ~EngineHandle() { kba_engine_close(h); }
};

const char* const kRubric[] = {
    "Nonsensical answer",
    "Incorrect or inaccurate statements (hallucinations)",
    "Correct material with only minor inaccuracies",
    "Answer is clear and correct",
    "Ideal answer, close to what an expert would respond",
};

int cmd_ingest(const std::string& config) {
    EngineHandle e(config);
    char* out = nullptr;
    check(kba_ingest(e.h, &out));
    auto r = json::parse(take(out));
    std::printf("documents: %zu (manual pages %zu, guides %zu, other %zu)\n", r["documents"].get<std::size_t>(),
                r["manual_pages"].get<std::size_t>(), r["guides"].get<std::size_t>(), r["other"].get<std::size_t>());
    std::printf("chunks: %zu\nkeywords: %zu\n", r["chunks"].get<std::size_t>(), r["keywords"].get<std::size_t>());
    for (const auto& d : r["databases"]) {
        std::printf("database %s: %zu records (%s) -> %s\n", d["name"].get<std::string>().c_str(),
                    d["records"].get<std::size_t>(), d["model_id"].get<std::string>().c_str(),
                    d["path"].get<std::string>().c_str());
    }
    return 0;
}

int cmd_ask(const std::string& config, const std::string& question, const std::string& mode, const std::string& id,
            bool html, bool as_json, const std::string& check_hook, bool have_check) {
    EngineHandle e(config);
    json opts{{"mode", mode}};
    if (!id.empty()) opts["question_id"] = id;
    if (have_check) opts["check_hook"] = check_hook;
    char* out = nullptr;
    check(kba_ask(e.h, question.c_str(), opts.dump().c_str(), &out));
    const auto raw = take(out);
    if (as_json) {
        std::cout << raw << "\n";
        return 0;
    }
    auto r = json::parse(raw);
    std::cout << (html ? r["html"].get<std::string>() : r["answer"].get<std::string>()) << "\n\n";
    const auto& t = r["timing"];
    std::printf("record: %s  mode: %s  rag: %.3f s  llm: %.3f s  total: %.3f s\n",
                r["record_id"].get<std::string>().c_str(), r["mode"].get<std::string>().c_str(),
                t["rag_seconds"].get<double>(), t["llm_seconds"].get<double>(), t["total_seconds"].get<double>());
    if (r["degraded"].get<bool>()) std::printf("note: reranker unavailable, context passed through unranked\n");
    std::size_t n = 0;
    for (const auto& c : r["context"]) {
        std::printf("  [%zu] %s%s\n", ++n, c["link"].get<std::string>().c_str(),
                    c["pinned"].get<bool>() ? "  (keyword match)" : "");
    }
    for (const auto& c : r["checks"]) {
        std::printf("code block %zu: %s\n", c["block_index"].get<std::size_t>(), c["status"].get<std::string>().c_str());
        const auto diag = c["diagnostics"].get<std::string>();
        if (!diag.empty()) std::printf("%s\n", diag.c_str());
    }
    return 0;
}

int cmd_bench(const std::string& config, const std::string& path, const std::string& modes, unsigned jobs) {
    EngineHandle e(config);
    char* out = nullptr;
    check(kba_bench(e.h, path.c_str(), modes.c_str(), jobs, &out));
    auto r = json::parse(take(out));
    for (const auto& it : r["items"]) {
        if (it.contains("error")) {
            std::printf("%-12s %-11s FAILED %s\n", it["question_id"].get<std::string>().c_str(),
                        it["mode"].get<std::string>().c_str(), it["error"].get<std::string>().c_str());
        } else {
            std::printf("%-12s %-11s %s  rag %.3f s  llm %.3f s\n", it["question_id"].get<std::string>().c_str(),
                        it["mode"].get<std::string>().c_str(), it["record_id"].get<std::string>().c_str(),
                        it["rag_seconds"].get<double>(), it["llm_seconds"].get<double>());
        }
    }
    const auto failed = r["failed"].get<std::size_t>();
    std::printf("%zu runs, %zu failed\n", r["items"].size(), failed);
    return failed == 0 ? 0 : kExitRuntime;
}

int cmd_score_session(const std::string& config, const std::string& configs, const std::string& questions,
                      std::uint64_t seed, const std::string& scorer) {
    EngineHandle e(config);
    kba_session* s = nullptr;
    check(kba_session_open(e.h, questions.c_str(), configs.c_str(), seed, &s));
    std::unique_ptr<kba_session, decltype(&kba_session_close)> guard(s, kba_session_close);
    char* out = nullptr;
    check(kba_session_items(s, &out));
    auto view = json::parse(take(out));
    const auto& items = view["items"];
    std::printf("session %s: %zu answers to score blind\n", view["session_id"].get<std::string>().c_str(), items.size());
    for (int v = 0; v < 5; ++v) std::printf("  %d  %s\n", v, kRubric[v]);
    std::size_t scored = 0;
    for (const auto& it : items) {
        std::printf("\n=== %zu/%zu (%s) ===\nQuestion:\n%s\n\nAnswer:\n%s\n\n", it["position"].get<std::size_t>(),
                    items.size(), it["item_id"].get<std::string>().c_str(), it["question"].get<std::string>().c_str(),
                    it["answer"].get<std::string>().c_str());
        while (true) {
            std::printf("score 0-4 [comment], s to skip, q to quit: ");
            std::fflush(stdout);
            std::string line;
            if (!std::getline(std::cin, line)) {
                std::printf("\n%zu scored\n", scored);
                return 0;
            }
            auto first = line.find_first_not_of(" \t");
            if (first == std::string::npos) continue;
            line = line.substr(first);
            if (line[0] == 'q') {
                std::printf("%zu scored\n", scored);
                return 0;
            }
            if (line[0] == 's') break;
            if (line[0] < '0' || line[0] > '4' || (line.size() > 1 && line[1] != ' ' && line[1] != '\t')) {
                std::printf("enter a single digit 0-4\n");
                continue;
            }
            const auto comment = line.size() > 2 ? line.substr(2) : std::string();
            check(kba_session_submit(s, it["item_id"].get<std::string>().c_str(), line[0] - '0', scorer.c_str(),
                                     comment.c_str()));
            ++scored;
            break;
        }
    }
    std::printf("\n%zu scored\n", scored);
    return 0;
}

int cmd_report(const std::string& config, const std::vector<std::string>& compare, bool latency,
               const std::string& scorer, bool mean, bool csv, const std::string& configs) {
    EngineHandle e(config);
    char* out = nullptr;
    if (!compare.empty()) {
        check(kba_report_compare(e.h, compare[0].c_str(), compare[1].c_str(), scorer.empty() ? nullptr : scorer.c_str(),
                                 mean ? 1 : 0, csv ? 1 : 0, &out));
    } else {
        (void)latency;
        check(kba_report_latency(e.h, configs.empty() ? nullptr : configs.c_str(), csv ? 1 : 0, &out));
    }
    std::cout << take(out);
    return 0;
}

int cmd_serve(const std::string& config, const std::string& bind, int port) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    EngineHandle e(config);
    kba_server* srv = nullptr;
    int bound = 0;
    check(kba_server_start(e.h, bind.empty() ? nullptr : bind.c_str(), port, &srv, &bound));
    std::printf("listening on port %d (API under /v1, events at /v1/events)\n", bound);
    std::fflush(stdout);
    int sig = 0;
    const auto st = kba_server_wait_signal(srv, &sig);
    kba_server_stop(srv);
    check(st);
    std::printf("stopped (signal %d)\n", sig);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kba: documentation question answering with retrieval, reranking and reviewed replies"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kba_version()));

    std::string config = std::getenv("KBA_CONFIG") ? std::getenv("KBA_CONFIG") : "kba.json";
    app.add_option("-c,--config", config, "Config file (default: $KBA_CONFIG or ./kba.json)");

    const std::vector<std::string> modes{"baseline", "rag", "rag-rerank"};
    const std::vector<std::string> labels{"baseline", "rag", "rag-rerank", "rag_rerank", "human"};

    auto* ingest = app.add_subcommand("ingest", "Chunk the corpus, index keywords and build vector databases");

    auto* ask = app.add_subcommand("ask", "Answer one question and record it");
    std::string question, mode = "rag-rerank", qid, check_hook;
    bool html = false, as_json = false;
    ask->add_option("question", question, "The question")->required();
    ask->add_option("-m,--mode", mode, "baseline, rag or rag-rerank")->check(CLI::IsMember(modes));
    ask->add_option("--id", qid, "Question id to file the record under");
    ask->add_flag("--html", html, "Print the answer rendered as HTML");
    ask->add_flag("--json", as_json, "Print the full result as JSON");
    auto* check_opt = ask->add_option("--check", check_hook, "Code check hook; {file} and {lang} are substituted");

    auto* bench = app.add_subcommand("bench", "Run every question under every mode");
    std::string questions_path, bench_modes = "baseline,rag,rag-rerank";
    unsigned jobs = 1;
    bench->add_option("questions", questions_path, "JSONL file of {id, question, tags}")->required()->check(CLI::ExistingFile);
    bench->add_option("--modes", bench_modes, "Comma-separated modes");
    bench->add_option("-j,--jobs", jobs, "Concurrent questions")->check(CLI::Range(1u, 64u));

    auto* score = app.add_subcommand("score", "Blind-score answers interactively, or score one record directly");
    std::string score_configs = "baseline,rag-rerank", score_questions, scorer, record_id;
    std::uint64_t seed = 0;
    int value = -1;
    score->add_option("--configs", score_configs, "Configurations to mix into the session");
    score->add_option("--questions", score_questions, "Comma-separated question ids (default: all answered)");
    score->add_option("--seed", seed, "Shuffle seed");
    score->add_option("--scorer", scorer, "Your name, stored with each score")->required();
    auto* rec_opt = score->add_option("--record", record_id, "Score this record directly (not blind)");
    auto* val_opt = score->add_option("--value", value, "Score for --record")->check(CLI::Range(0, 4));
    rec_opt->needs(val_opt);
    val_opt->needs(rec_opt);
    std::string rationale;
    score->add_option("--rationale", rationale, "Comment for --record");

    auto* report = app.add_subcommand("report", "Score comparison or latency table");
    std::vector<std::string> compare;
    bool latency = false, mean = false, csv = false;
    std::string report_scorer, report_configs;
    auto* cmp_opt = report->add_option("--compare", compare, "Two configurations: A B")->expected(2)->check(CLI::IsMember(labels));
    auto* lat_opt = report->add_flag("--latency", latency, "Min/Max/Avg RAG and LLM time per configuration");
    cmp_opt->excludes(lat_opt);
    report->add_option("--scorer", report_scorer, "Only count this scorer's scores");
    report->add_flag("--mean", mean, "Average the latest score of every scorer");
    report->add_flag("--csv", csv, "CSV output");
    report->add_option("--configs", report_configs, "Configurations for --latency");
    report->callback([&] {
        if (compare.empty() && !latency) throw CLI::ValidationError("report", "one of --compare or --latency is required");
    });

    auto* serve = app.add_subcommand("serve", "Run the review gateway HTTP service");
    std::string bind;
    int port = -1;
    serve->add_option("--bind", bind, "Bind address (default from config)");
    serve->add_option("--port", port, "Port (default from config, 0 for any)")->check(CLI::Range(0, 65535));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (ingest->parsed()) return cmd_ingest(config);
        if (ask->parsed()) return cmd_ask(config, question, mode, qid, html, as_json, check_hook, check_opt->count() > 0);
        if (bench->parsed()) return cmd_bench(config, questions_path, bench_modes, jobs);
        if (score->parsed()) {
            if (!record_id.empty()) {
                EngineHandle e(config);
                check(kba_score_add(e.h, record_id.c_str(), value, scorer.c_str(), rationale.c_str()));
                std::printf("scored %s: %d\n", record_id.c_str(), value);
                return 0;
            }
            return cmd_score_session(config, score_configs, score_questions, seed, scorer);
        }
        if (report->parsed()) return cmd_report(config, compare, latency, report_scorer, mean, csv, report_configs);
        if (serve->parsed()) return cmd_serve(config, bind, port);
    } catch (const Failure& f) {
        std::fprintf(stderr, "kba: error: %s: %s\n", kba_status_name(f.status), f.message.c_str());
        return f.status == KBA_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "kba: error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
