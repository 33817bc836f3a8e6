#include "kba/engine.hpp"

#include "kba/error.hpp"
#include "kba/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <set>
#include <thread>

namespace fs = std::filesystem;

namespace kba {

using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

HttpProviderOptions embedding_http_from_json(const json& j) {
    HttpProviderOptions o;
    o.base_url = j.value("base_url", "");
    o.model = j.value("model", "");
    o.api_key_env = j.value("api_key_env", "");
    o.timeout_seconds = j.value("timeout_seconds", o.timeout_seconds);
    o.max_attempts = j.value("max_attempts", o.max_attempts);
    o.backoff_seconds = j.value("backoff_seconds", o.backoff_seconds);
    return o;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_config, std::string("config key '") + key + "': " + e.what());
    }
}

} // namespace

EngineConfig EngineConfig::from_json(const json& j, const fs::path& base) {
    if (!j.is_object()) throw Error(Errc::invalid_config, "config must be a JSON object");
    EngineConfig c;
    try {
        const auto corpus = j.value("corpus", json::object());
        c.corpus_root = resolve(base, get_or<std::string>(corpus, "root", "corpus"));
        c.corpus.chunk_size = get_or(corpus, "chunk_size", c.corpus.chunk_size);
        c.corpus.overlap = get_or(corpus, "overlap", c.corpus.overlap);
        c.corpus.manualpage_glob = get_or(corpus, "manualpage_glob", c.corpus.manualpage_glob);
        c.corpus.other_glob = get_or(corpus, "other_glob", c.corpus.other_glob);
        c.corpus.strip_front_matter = get_or(corpus, "strip_front_matter", c.corpus.strip_front_matter);
        c.corpus.strip_patterns = get_or(corpus, "strip_patterns", c.corpus.strip_patterns);
        c.corpus.link_base = get_or(corpus, "link_base", c.corpus.link_base);

        c.data_dir = resolve(base, get_or<std::string>(j, "data_dir", "data"));
        c.history_path = resolve(base, get_or<std::string>(j, "history_path", "history.jsonl"));

        if (j.contains("databases")) {
            c.databases.clear();
            for (const auto& d : j.at("databases")) {
                DatabaseConfig db;
                db.name = d.at("name").get<std::string>();
                const auto e = d.value("embedding", json::object());
                db.embedding.kind = e.value("kind", "hash");
                db.embedding.dim = e.value("dim", std::size_t{256});
                db.embedding.http = embedding_http_from_json(e);
                c.databases.push_back(std::move(db));
            }
        }
        c.active_database = get_or(j, "active_database",
                                   c.databases.empty() ? std::string() : c.databases.front().name);

        const auto cont = j.value("continuation", json::object());
        c.continuation.kind = cont.value("kind", "scripted");
        c.continuation.fixture = resolve(base, cont.value("fixture", ""));
        c.continuation.latency = std::chrono::milliseconds(cont.value("latency_ms", 0));
        c.continuation.temperature = cont.value("temperature", 0.0);
        c.continuation.http.base_url = cont.value("base_url", "");
        c.continuation.http.model = cont.value("model", "");
        c.continuation.http.api_key_env = cont.value("api_key_env", "");
        c.continuation.http.timeout_seconds = cont.value("timeout_seconds", c.continuation.http.timeout_seconds);
        c.continuation.http.max_attempts = cont.value("max_attempts", c.continuation.http.max_attempts);

        const auto rr = j.value("reranker", json::object());
        c.reranker.kind = rr.value("kind", "lexical");
        c.reranker.http.base_url = rr.value("base_url", "");
        c.reranker.http.model = rr.value("model", "");
        c.reranker.http.api_key_env = rr.value("api_key_env", "");
        c.reranker.http.timeout_seconds = rr.value("timeout_seconds", c.reranker.http.timeout_seconds);

        const auto ret = j.value("retrieval", json::object());
        c.retrieval.first_pass_k = ret.value("first_pass_k", c.retrieval.first_pass_k);
        c.retrieval.final_l = ret.value("final_l", c.retrieval.final_l);
        c.retrieval.keyword_matching = keyword_matching_from_string(ret.value("keyword_matching", "exact"));

        if (j.contains("prompt")) {
            const auto& p = j.at("prompt");
            if (p.is_string()) {
                c.prompt = PromptTemplate::from_json(json::parse(read_text_file(resolve(base, p.get<std::string>()))));
            } else {
                c.prompt = PromptTemplate::from_json(p);
            }
        }

        const auto srv = j.value("server", json::object());
        c.server.bind = srv.value("bind", c.server.bind);
        c.server.port = srv.value("port", c.server.port);

        const auto gw = j.value("gateway", json::object());
        c.gateway.adapter = gw.value("adapter", c.gateway.adapter);
        c.gateway.maildir = resolve(base, gw.value("maildir", ""));
        c.gateway.webhook_url = gw.value("webhook_url", "");
        c.gateway.bearer_env = gw.value("bearer_env", "");
        c.gateway.bot_address = gw.value("bot_address", c.gateway.bot_address);
        c.gateway.poll_interval_seconds = gw.value("poll_interval_s", c.gateway.poll_interval_seconds);

        const auto pp = j.value("postprocess", json::object());
        c.postprocess.code_check_hook = pp.value("code_check_hook", "");
        c.postprocess.code_check_timeout_seconds =
            pp.value("code_check_timeout_s", c.postprocess.code_check_timeout_seconds);
        c.postprocess.json_answer_field = pp.value("json_answer_field", "");
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_config, std::string("config: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::invalid_config) throw;
        throw Error(Errc::invalid_config, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

EngineConfig EngineConfig::load(const fs::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const Error&) {
        throw Error(Errc::invalid_config, "cannot read config file " + path.string());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_config, path.string() + ": " + e.what());
    }
    return from_json(j, fs::absolute(path).parent_path());
}

void EngineConfig::validate() const {
    auto bad = [](const std::string& m) { throw Error(Errc::invalid_config, m); };
    if (corpus.chunk_size == 0) bad("corpus.chunk_size must be positive");
    if (corpus.overlap >= corpus.chunk_size) bad("corpus.overlap must be smaller than chunk_size");
    if (databases.empty()) bad("at least one database must be configured");
    std::set<std::string> names;
    for (const auto& d : databases) {
        if (d.name.empty() || d.name.find_first_of("/\\") != std::string::npos) bad("invalid database name '" + d.name + "'");
        if (!names.insert(d.name).second) bad("duplicate database name '" + d.name + "'");
        if (d.embedding.kind == "hash") {
            if (d.embedding.dim == 0) bad("database " + d.name + ": embedding.dim must be positive");
        } else if (d.embedding.kind == "http") {
            if (d.embedding.http.base_url.empty() || d.embedding.http.model.empty()) {
                bad("database " + d.name + ": http embedding needs base_url and model");
            }
        } else {
            bad("database " + d.name + ": unknown embedding kind '" + d.embedding.kind + "'");
        }
    }
    if (!names.count(active_database)) bad("active_database '" + active_database + "' is not configured");
    if (continuation.kind == "http") {
        if (continuation.http.base_url.empty() || continuation.http.model.empty()) {
            bad("continuation: http provider needs base_url and model");
        }
    } else if (continuation.kind != "scripted") {
        bad("continuation: unknown kind '" + continuation.kind + "'");
    }
    if (reranker.kind == "http") {
        if (reranker.http.base_url.empty()) bad("reranker: http scorer needs base_url");
    } else if (reranker.kind != "lexical") {
        bad("reranker: unknown kind '" + reranker.kind + "'");
    }
    try {
        retrieval.validate();
    } catch (const Error& e) {
        bad(std::string("retrieval: ") + e.what());
    }
    if (gateway.adapter != "fake" && gateway.adapter != "maildir" && gateway.adapter != "webhook") {
        bad("gateway: unknown adapter '" + gateway.adapter + "'");
    }
    if (gateway.adapter == "maildir" && gateway.maildir.empty()) bad("gateway: maildir adapter needs a maildir path");
    if (gateway.adapter == "webhook" && gateway.webhook_url.empty()) bad("gateway: webhook adapter needs webhook_url");
    if (server.port < 0 || server.port > 65535) bad("server.port out of range");
}

const DatabaseConfig& EngineConfig::active() const {
    for (const auto& d : databases) {
        if (d.name == active_database) return d;
    }
    throw Error(Errc::invalid_config, "active_database '" + active_database + "' is not configured");
}

AskMode ask_mode_from_string(std::string_view s) {
    if (s == "baseline") return AskMode::baseline;
    if (s == "rag") return AskMode::rag;
    if (s == "rag-rerank" || s == "rag_rerank") return AskMode::rag_rerank;
    throw Error(Errc::invalid_argument, "unknown mode '" + std::string(s) + "' (expected baseline, rag or rag-rerank)");
}

ConfigLabel to_label(AskMode mode) noexcept {
    switch (mode) {
    case AskMode::baseline: return ConfigLabel::baseline;
    case AskMode::rag: return ConfigLabel::rag;
    case AskMode::rag_rerank: return ConfigLabel::rag_rerank;
    }
    return ConfigLabel::rag_rerank;
}

json IngestReport::to_json() const {
    json dbs = json::array();
    for (const auto& d : databases) {
        dbs.push_back({{"name", d.name}, {"model_id", d.model_id}, {"records", d.records}, {"path", d.path}});
    }
    return {{"documents", documents}, {"manual_pages", manual_pages}, {"guides", guides}, {"other", other},
            {"chunks", chunks},       {"keywords", keywords},         {"databases", dbs}};
}

std::vector<BenchQuestion> load_questions(const fs::path& path) {
    const auto text = read_text_file(path);
    std::vector<BenchQuestion> out;
    std::set<std::string> ids;
    std::size_t lineno = 0;
    for (const auto& line : split(text, '\n')) {
        ++lineno;
        if (trim(line).empty()) continue;
        BenchQuestion q;
        try {
            auto j = json::parse(line);
            q.question = j.at("question").get<std::string>();
            q.id = j.value("id", "q" + std::to_string(out.size() + 1));
            q.tags = j.value("tags", std::vector<std::string>{});
        } catch (const json::exception& e) {
            throw Error(Errc::format_error, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!ids.insert(q.id).second) {
            throw Error(Errc::format_error, path.string() + ":" + std::to_string(lineno) + ": duplicate id " + q.id);
        }
        out.push_back(std::move(q));
    }
    if (out.empty()) throw Error(Errc::empty_input, path.string() + " has no questions");
    return out;
}

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
    config_.validate();
    history_ = std::make_unique<HistoryStore>(config_.history_path);
}

std::unique_ptr<Engine> Engine::open(const fs::path& config_path) {
    return std::make_unique<Engine>(EngineConfig::load(config_path));
}

void Engine::set_continuation_provider(std::unique_ptr<ContinuationProvider> p) { continuation_ = std::move(p); }
void Engine::set_embedding_provider(std::unique_ptr<EmbeddingProvider> p) {
    std::lock_guard lock(load_mu_);
    embedding_ = std::move(p);
}
void Engine::set_rerank_scorer(std::unique_ptr<RerankScorer> s) { scorer_ = std::move(s); }

std::unique_ptr<EmbeddingProvider> Engine::make_embedding_provider(const DatabaseConfig& db) const {
    if (db.embedding.kind == "http") return std::make_unique<HttpEmbeddingProvider>(db.embedding.http);
    return std::make_unique<HashEmbeddingProvider>(db.embedding.dim);
}

IngestReport Engine::ingest() {
    auto docs = load_corpus(config_.corpus_root, config_.corpus);
    auto keywords = build_keyword_index(docs);
    auto chunks = chunk_corpus(docs, config_.corpus);

    IngestReport rep;
    rep.documents = docs.size();
    for (const auto& d : docs) {
        if (d.kind == DocKind::manual_page) {
            ++rep.manual_pages;
        } else if (d.kind == DocKind::guide) {
            ++rep.guides;
        } else {
            ++rep.other;
        }
    }
    rep.chunks = chunks.size();
    rep.keywords = keywords.size();

    fs::create_directories(config_.data_dir);
    ChunkStore store(chunks);
    write_file_atomic(config_.data_dir / "chunks.jsonl", store.to_jsonl());
    write_file_atomic(config_.data_dir / "keywords.json", keywords.to_json());

    const auto build_time = default_build_time();
    for (const auto& dbc : config_.databases) {
        std::unique_ptr<EmbeddingProvider> own;
        EmbeddingProvider* provider = nullptr;
        if (dbc.name == config_.active_database && embedding_) {
            provider = embedding_.get();
        } else {
            own = make_embedding_provider(dbc);
            provider = own.get();
        }
        BuildOptions opts;
        opts.name = dbc.name;
        opts.build_time = build_time;
        auto db = build_database(chunks, *provider, opts);
        const auto path = config_.data_dir / (dbc.name + ".kvdb");
        db.save(path);
        rep.databases.push_back({dbc.name, db.model_id(), db.size(), path.string()});
        spdlog::info("built database {} ({} records, {})", dbc.name, db.size(), db.model_id());
    }
    std::lock_guard lock(load_mu_);
    loaded_.reset();
    return rep;
}

std::shared_ptr<const Engine::Loaded> Engine::loaded() {
    std::lock_guard lock(load_mu_);
    if (loaded_) return loaded_;
    const auto chunks_path = config_.data_dir / "chunks.jsonl";
    const auto db_path = config_.data_dir / (config_.active_database + ".kvdb");
    if (!fs::exists(chunks_path) || !fs::exists(db_path)) {
        throw Error(Errc::not_found, "no index under " + config_.data_dir.string() + "; run `kba ingest` first");
    }
    auto l = std::make_shared<Loaded>();
    l->chunks = ChunkStore::from_jsonl(read_text_file(chunks_path));
    l->keywords = KeywordIndex::from_json(read_text_file(config_.data_dir / "keywords.json"));
    l->db = VectorDatabase::load(db_path);
    if (!embedding_) embedding_ = make_embedding_provider(config_.active());
    if (l->db.model_id() != embedding_->model_id()) {
        throw Error(Errc::model_mismatch, "database " + config_.active_database + " was built with " +
                                              l->db.model_id() + " but the query provider is " +
                                              embedding_->model_id() + "; re-run ingest");
    }
    l->embedding = embedding_.get();
    loaded_ = l;
    return loaded_;
}

AskResult Engine::ask(const std::string& question, const AskOptions& options) {
    if (trim(question).empty()) throw Error(Errc::empty_input, "question is empty");
    ContinuationProvider* continuation = nullptr;
    RerankScorer* scorer = nullptr;
    {
        std::lock_guard lock(load_mu_);
        if (!continuation_) {
            if (config_.continuation.kind == "http") {
                continuation_ = std::make_unique<HttpChatProvider>(config_.continuation.http);
            } else {
                auto p = config_.continuation.fixture.empty() ? std::make_unique<ScriptedProvider>()
                                                              : ScriptedProvider::from_file(config_.continuation.fixture);
                p->set_latency(config_.continuation.latency);
                p->set_question_marker(config_.prompt.question_header);
                continuation_ = std::move(p);
            }
        }
        if (!scorer_) {
            if (config_.reranker.kind == "http") {
                scorer_ = std::make_unique<HttpRerankScorer>(config_.reranker.http);
            } else {
                scorer_ = std::make_unique<LexicalScorer>();
            }
        }
        continuation = continuation_.get();
        scorer = scorer_.get();
    }

    Stopwatch total;
    InteractionRecord rec;
    rec.question = question;
    rec.question_id = options.question_id;
    rec.thread_id = options.thread_id;
    rec.label = to_label(options.mode);
    rec.config.continuation_model = continuation->model_id();
    rec.config.temperature = config_.continuation.temperature;
    rec.config.prompt_template = config_.prompt.to_json();

    PromptBundle bundle;
    double rag_seconds = 0.0;
    if (options.mode == AskMode::baseline) {
        bundle = assemble_baseline_prompt(question, config_.prompt);
    } else {
        Stopwatch rag;
        const auto state = loaded();
        const auto& l = *state;
        auto candidates = retrieve(question, l.db, l.chunks, l.keywords, config_.retrieval, *l.embedding);
        RerankedContext ctx = options.mode == AskMode::rag_rerank
                                  ? rerank(question, candidates, config_.retrieval, *scorer)
                                  : truncate_context(question, candidates, config_.retrieval.final_l);
        bundle = assemble_prompt(ctx, question, config_.prompt);
        rag_seconds = rag.seconds();

        rec.config.embedding_model = l.db.model_id();
        rec.config.database = l.db.name();
        rec.config.first_pass_k = config_.retrieval.first_pass_k;
        rec.config.final_l = config_.retrieval.final_l;
        rec.config.keyword_matching = std::string(to_string(config_.retrieval.keyword_matching));
        rec.config.scorer_id = ctx.scorer_id;
        rec.config.degraded = ctx.degraded;
        rec.config.degraded_reason = ctx.degraded_reason;
        // Only blocks that survived the token budget went into the prompt.
        const auto kept = ctx.items.size() - bundle.dropped_blocks;
        for (std::size_t i = 0; i < kept; ++i) {
            const auto& it = ctx.items[i];
            rec.retrieved.push_back({it.chunk_id, it.link, it.score, std::string(to_string(it.origin)), it.pinned});
        }
    }

    auto completion = complete(bundle, *continuation, config_.continuation.temperature);
    rec.config.continuation_model = completion.model;
    rec.rendered_prompt = bundle.rendered;
    rec.answer = config_.postprocess.json_answer_field.empty()
                     ? completion.answer
                     : unwrap_json_answer(completion.answer, config_.postprocess.json_answer_field);
    rec.timing = TimingBreakdown{rag_seconds, completion.llm_seconds, total.seconds()};

    AskResult res;
    res.document = parse_answer(rec.answer);
    const auto& hook_cmd = options.check_hook ? *options.check_hook : config_.postprocess.code_check_hook;
    if (!hook_cmd.empty()) {
        CodeCheckHook hook{hook_cmd,
                           std::chrono::milliseconds(static_cast<long>(config_.postprocess.code_check_timeout_seconds * 1000))};
        res.checks = check_code(res.document, hook);
    }
    res.context_blocks = bundle.context_blocks.size();
    rec.record_id = history_->append(rec);
    res.record = std::move(rec);
    return res;
}

std::vector<BenchItem> Engine::bench(const std::vector<BenchQuestion>& questions, const std::vector<AskMode>& modes,
                                     std::size_t jobs) {
    if (questions.empty() || modes.empty()) throw Error(Errc::empty_input, "bench needs questions and modes");
    std::vector<BenchItem> items;
    std::vector<const BenchQuestion*> qs;
    for (const auto& q : questions) {
        for (auto m : modes) {
            items.push_back({q.id, m, {}, {}, std::nullopt});
            qs.push_back(&q);
        }
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            try {
                auto r = ask(qs[i]->question, {items[i].mode, qs[i]->id, {}, std::nullopt});
                items[i].record_id = r.record.record_id;
                items[i].timing = r.record.timing;
            } catch (const std::exception& e) {
                items[i].error = e.what();
                spdlog::warn("bench {} [{}] failed: {}", items[i].question_id,
                             to_string(to_label(items[i].mode)), e.what());
            }
        }
    };
    jobs = std::clamp<std::size_t>(jobs, 1, items.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return items;
}

DraftResult Engine::draft(const ReviewThread& thread, const std::string& query) {
    auto r = ask(query, {AskMode::rag_rerank, {}, thread.thread_id, std::nullopt});
    return {r.record.answer, r.record.record_id, r.record.retrieved};
}

} // namespace kba
