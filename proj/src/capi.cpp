#include "kba/kba.h"

#include "kba/engine.hpp"
#include "kba/error.hpp"
#include "kba/server.hpp"
#include "kba/util.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <cstring>
#include <set>

using nlohmann::json;

struct kba_engine {
    std::unique_ptr<kba::Engine> engine;
};

struct kba_session {
    kba_engine* owner = nullptr;
    kba::ScoringSession session;
};

struct kba_server {
    std::unique_ptr<kba::Service> service;
};

namespace {

thread_local std::string g_last_error;

kba_status fail(kba_status s, std::string message) {
    g_last_error = std::move(message);
    return s;
}

template <class F>
kba_status guarded(F&& f) noexcept {
    try {
        f();
        g_last_error.clear();
        return KBA_OK;
    } catch (const kba::Error& e) {
        return fail(static_cast<kba_status>(static_cast<int>(e.code())), e.what());
    } catch (const json::exception& e) {
        return fail(KBA_ERR_FORMAT, e.what());
    } catch (const std::bad_alloc&) {
        return fail(KBA_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(KBA_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(KBA_ERR_INTERNAL, "unknown exception");
    }
}

// Diagnostics go to stderr so stdout stays clean for results.
// KBA_LOG_LEVEL takes spdlog level names; the default is warn.
void ensure_logging() {
    static const bool once = [] {
        auto logger = spdlog::stderr_color_mt("kba");
        const char* lvl = std::getenv("KBA_LOG_LEVEL");
        logger->set_level(lvl ? spdlog::level::from_str(lvl) : spdlog::level::warn);
        spdlog::set_default_logger(logger);
        return true;
    }();
    (void)once;
}

char* dup_string(const std::string& s) {
    auto* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (p == nullptr) throw std::bad_alloc();
    std::memcpy(p, s.data(), s.size());
    p[s.size()] = '\0';
    return p;
}

void require(const void* p, const char* what) {
    if (p == nullptr) throw kba::Error(kba::Errc::invalid_argument, std::string(what) + " must not be NULL");
}

std::vector<std::string> csv_list(const char* s) {
    std::vector<std::string> out;
    if (s == nullptr) return out;
    for (auto& part : kba::split(s, ',')) {
        auto t = kba::trim(part);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

kba::ConfigLabel label_arg(const std::string& s) {
    return s == "rag-rerank" ? kba::ConfigLabel::rag_rerank : kba::config_label_from_string(s);
}

json refs_json(const std::vector<kba::RetrievedRef>& refs) {
    json out = json::array();
    for (const auto& r : refs) {
        out.push_back({{"chunk_id", r.chunk_id}, {"link", r.link}, {"score", r.score}, {"origin", r.origin},
                       {"pinned", r.pinned}});
    }
    return out;
}

} // namespace

extern "C" {

const char* kba_version(void) { return "0.1.0"; }

const char* kba_status_name(kba_status status) {
    if (status == KBA_OK) return "ok";
    if (status == KBA_ERR_INTERNAL) return "internal";
    if (status >= KBA_ERR_INVALID_ARGUMENT && status <= KBA_ERR_ADAPTER) {
        return kba::errc_name(static_cast<kba::Errc>(static_cast<int>(status))).data();
    }
    return "unknown";
}

const char* kba_last_error(void) { return g_last_error.c_str(); }

void kba_free(char* str) { std::free(str); }

kba_status kba_engine_open(const char* config_path, kba_engine** out) {
    return guarded([&] {
        ensure_logging();
        require(config_path, "config_path");
        require(out, "out");
        *out = nullptr;
        auto h = std::make_unique<kba_engine>();
        h->engine = kba::Engine::open(config_path);
        *out = h.release();
    });
}

kba_status kba_engine_open_json(const char* config_json, const char* base_dir, kba_engine** out) {
    return guarded([&] {
        ensure_logging();
        require(config_json, "config_json");
        require(out, "out");
        *out = nullptr;
        json j;
        try {
            j = json::parse(config_json);
        } catch (const json::exception& e) {
            throw kba::Error(kba::Errc::invalid_config, e.what());
        }
        const auto base = base_dir ? std::filesystem::path(base_dir) : std::filesystem::current_path();
        auto h = std::make_unique<kba_engine>();
        h->engine = std::make_unique<kba::Engine>(kba::EngineConfig::from_json(j, base));
        *out = h.release();
    });
}

void kba_engine_close(kba_engine* engine) { delete engine; }

kba_status kba_ingest(kba_engine* engine, char** report_json) {
    return guarded([&] {
        require(engine, "engine");
        require(report_json, "report_json");
        *report_json = dup_string(engine->engine->ingest().to_json().dump());
    });
}

kba_status kba_ask(kba_engine* engine, const char* question, const char* options_json, char** result_json) {
    return guarded([&] {
        require(engine, "engine");
        require(question, "question");
        require(result_json, "result_json");
        kba::AskOptions opts;
        if (options_json != nullptr && *options_json != '\0') {
            json o;
            try {
                o = json::parse(options_json);
            } catch (const json::exception& e) {
                throw kba::Error(kba::Errc::invalid_argument, std::string("options_json: ") + e.what());
            }
            if (o.contains("mode")) opts.mode = kba::ask_mode_from_string(o.at("mode").get<std::string>());
            opts.question_id = o.value("question_id", "");
            if (o.contains("check_hook")) opts.check_hook = o.at("check_hook").get<std::string>();
        }
        auto r = engine->engine->ask(question, opts);
        json checks = json::array();
        for (const auto& c : r.checks) {
            checks.push_back({{"block_index", c.block_index},
                              {"status", kba::to_string(c.status)},
                              {"exit_code", c.exit_code},
                              {"diagnostics", c.diagnostics}});
        }
        const auto& rec = r.record;
        json out{{"record_id", rec.record_id},
                 {"mode", kba::to_string(rec.label)},
                 {"answer", rec.answer},
                 {"html", r.document.html},
                 {"timing",
                  {{"rag_seconds", rec.timing->rag_seconds},
                   {"llm_seconds", rec.timing->llm_seconds},
                   {"total_seconds", rec.timing->total_seconds}}},
                 {"context", refs_json(rec.retrieved)},
                 {"context_blocks", r.context_blocks},
                 {"code_blocks", r.document.code_block_count()},
                 {"unterminated_fence", r.document.has_unterminated_fence()},
                 {"checks", checks},
                 {"degraded", rec.config.degraded},
                 {"model", rec.config.continuation_model}};
        *result_json = dup_string(out.dump());
    });
}

kba_status kba_bench(kba_engine* engine, const char* questions_path, const char* modes_csv, unsigned jobs,
                     char** result_json) {
    return guarded([&] {
        require(engine, "engine");
        require(questions_path, "questions_path");
        require(result_json, "result_json");
        std::vector<kba::AskMode> modes;
        for (const auto& m : csv_list(modes_csv)) modes.push_back(kba::ask_mode_from_string(m));
        if (modes.empty()) modes = {kba::AskMode::baseline, kba::AskMode::rag, kba::AskMode::rag_rerank};
        auto questions = kba::load_questions(questions_path);
        auto items = engine->engine->bench(questions, modes, jobs == 0 ? 1 : jobs);
        json arr = json::array();
        std::size_t failed = 0;
        for (const auto& it : items) {
            json j{{"question_id", it.question_id}, {"mode", kba::to_string(kba::to_label(it.mode))}};
            if (it.error.empty()) {
                j["record_id"] = it.record_id;
                j["rag_seconds"] = it.timing->rag_seconds;
                j["llm_seconds"] = it.timing->llm_seconds;
            } else {
                j["error"] = it.error;
                ++failed;
            }
            arr.push_back(std::move(j));
        }
        *result_json = dup_string(json{{"items", arr}, {"failed", failed}}.dump());
    });
}

kba_status kba_score_add(kba_engine* engine, const char* record_id, int value, const char* scorer_id,
                         const char* rationale) {
    return guarded([&] {
        require(engine, "engine");
        require(record_id, "record_id");
        require(scorer_id, "scorer_id");
        kba::RubricScore s;
        s.value = value;
        s.scorer_id = scorer_id;
        s.rationale = rationale ? rationale : "";
        engine->engine->history().add_score(record_id, s);
    });
}

kba_status kba_record_get(kba_engine* engine, const char* record_id, char** record_json) {
    return guarded([&] {
        require(engine, "engine");
        require(record_id, "record_id");
        require(record_json, "record_json");
        auto r = engine->engine->history().get(record_id);
        if (!r) throw kba::Error(kba::Errc::not_found, std::string("no record ") + record_id);
        *record_json = dup_string(kba::to_json(*r).dump());
    });
}

kba_status kba_report_compare(kba_engine* engine, const char* config_a, const char* config_b, const char* scorer_id,
                              int mean, int csv, char** text) {
    return guarded([&] {
        require(engine, "engine");
        require(config_a, "config_a");
        require(config_b, "config_b");
        require(text, "text");
        kba::CompareOptions o;
        o.scorer_id = scorer_id ? scorer_id : "";
        o.aggregation = mean ? kba::ScoreAggregation::mean : kba::ScoreAggregation::designated;
        auto c = kba::compare(engine->engine->history(), label_arg(config_a), label_arg(config_b), o);
        *text = dup_string(csv ? kba::render_comparison_csv(c) : kba::render_comparison_text(c));
    });
}

kba_status kba_report_latency(kba_engine* engine, const char* configs_csv, int csv, char** text) {
    return guarded([&] {
        require(engine, "engine");
        require(text, "text");
        std::vector<kba::ConfigLabel> labels;
        for (const auto& c : csv_list(configs_csv)) labels.push_back(label_arg(c));
        auto records = engine->engine->history().query();
        auto rep = kba::latency_report(records, labels);
        *text = dup_string(csv ? kba::render_latency_csv(rep) : kba::render_latency_text(rep));
    });
}

kba_status kba_session_open(kba_engine* engine, const char* question_ids_csv, const char* configs_csv, uint64_t seed,
                            kba_session** out) {
    return guarded([&] {
        require(engine, "engine");
        require(out, "out");
        *out = nullptr;
        std::vector<kba::ConfigLabel> labels;
        for (const auto& c : csv_list(configs_csv)) labels.push_back(label_arg(c));
        auto qids = csv_list(question_ids_csv);
        auto& history = engine->engine->history();
        if (qids.empty()) {
            // Every question that has an answer under each requested config.
            std::set<std::string> seen;
            for (const auto& r : history.query()) {
                const auto& key = r.question_key();
                if (seen.count(key)) continue;
                bool complete = !labels.empty();
                for (auto l : labels) complete = complete && history.latest(key, l).has_value();
                if (complete) {
                    seen.insert(key);
                    qids.push_back(key);
                }
            }
        }
        auto h = std::make_unique<kba_session>();
        h->owner = engine;
        h->session = kba::blind_batch(history, qids, labels, seed);
        *out = h.release();
    });
}

kba_status kba_session_items(kba_session* session, char** out) {
    return guarded([&] {
        require(session, "session");
        require(out, "out");
        *out = dup_string(session->session.to_json().dump());
    });
}

kba_status kba_session_submit(kba_session* session, const char* item_id, int value, const char* scorer_id,
                              const char* rationale) {
    return guarded([&] {
        require(session, "session");
        require(item_id, "item_id");
        require(scorer_id, "scorer_id");
        session->session.submit(session->owner->engine->history(), item_id, value, scorer_id,
                                rationale ? rationale : "");
    });
}

void kba_session_close(kba_session* session) { delete session; }

kba_status kba_server_start(kba_engine* engine, const char* bind, int port, kba_server** out, int* bound_port) {
    return guarded([&] {
        require(engine, "engine");
        require(out, "out");
        *out = nullptr;
        const auto& cfg = engine->engine->config();
        kba::ServerOptions o;
        o.bind = bind ? bind : cfg.server.bind;
        o.port = port < 0 ? cfg.server.port : port;
        o.poll_interval = std::chrono::milliseconds(static_cast<long>(cfg.gateway.poll_interval_seconds * 1000));
        auto h = std::make_unique<kba_server>();
        h->service = std::make_unique<kba::Service>(*engine->engine, o);
        const int p = h->service->start();
        if (bound_port) *bound_port = p;
        *out = h.release();
    });
}

kba_status kba_server_wait_signal(kba_server* server, int* signal_number) {
    return guarded([&] {
        require(server, "server");
        sigset_t set;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        int sig = 0;
        if (sigwait(&set, &sig) != 0) throw kba::Error(kba::Errc::io_error, "sigwait failed");
        if (signal_number) *signal_number = sig;
    });
}

void kba_server_stop(kba_server* server) {
    if (server == nullptr) return;
    try {
        server->service->stop();
    } catch (...) {
    }
    delete server;
}

kba_status kba_render_answer(const char* markdown, char** html) {
    return guarded([&] {
        require(markdown, "markdown");
        require(html, "html");
        *html = dup_string(kba::render_html(kba::parse_answer(markdown)));
    });
}

} // extern "C"
