#pragma once

#include "kba/corpus.hpp"
#include "kba/gateway.hpp"
#include "kba/generate.hpp"
#include "kba/history.hpp"
#include "kba/index.hpp"
#include "kba/markdown.hpp"
#include "kba/rerank.hpp"
#include "kba/retrieve.hpp"

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace kba {

struct EmbeddingConfig {
    std::string kind = "hash"; // hash | http
    std::size_t dim = 256;
    HttpProviderOptions http;
};

struct DatabaseConfig {
    std::string name = "docs";
    EmbeddingConfig embedding;
};

struct ContinuationConfig {
    std::string kind = "scripted"; // scripted | http
    std::filesystem::path fixture;
    std::chrono::milliseconds latency{0};
    HttpChatOptions http;
    double temperature = 0.0;
};

struct RerankerConfig {
    std::string kind = "lexical"; // lexical | http
    HttpRerankOptions http;
};

struct ServerConfig {
    std::string bind = "127.0.0.1";
    int port = 8080;
};

struct GatewayConfig {
    std::string adapter = "fake"; // fake | maildir | webhook
    std::filesystem::path maildir;
    std::string webhook_url;
    std::string bearer_env;
    std::string bot_address = "assistant@localhost";
    double poll_interval_seconds = 30.0;
};

struct PostprocessConfig {
    std::string code_check_hook;
    double code_check_timeout_seconds = 30.0;
    std::string json_answer_field;
};

/// Operator configuration. Paths are resolved against the config file's directory.
/// Credentials are referenced by environment variable name only.
struct EngineConfig {
    CorpusConfig corpus;
    std::filesystem::path corpus_root;
    std::filesystem::path data_dir;
    std::vector<DatabaseConfig> databases{DatabaseConfig{}};
    std::string active_database = "docs";
    ContinuationConfig continuation;
    RerankerConfig reranker;
    RetrievalConfig retrieval;
    PromptTemplate prompt;
    std::filesystem::path history_path;
    ServerConfig server;
    GatewayConfig gateway;
    PostprocessConfig postprocess;

    static EngineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static EngineConfig load(const std::filesystem::path& path);
    /// Throws invalid-config on the first problem found.
    void validate() const;
    const DatabaseConfig& active() const;
};

enum class AskMode { baseline, rag, rag_rerank };

AskMode ask_mode_from_string(std::string_view s);
ConfigLabel to_label(AskMode mode) noexcept;

struct AskOptions {
    AskMode mode = AskMode::rag_rerank;
    std::string question_id;
    std::string thread_id;
    /// Overrides postprocess.code_check_hook for this call.
    std::optional<std::string> check_hook;
};

struct AskResult {
    InteractionRecord record;
    AnswerDocument document;
    std::vector<CodeCheckResult> checks;
    std::size_t context_blocks = 0;
};

struct IngestReport {
    std::size_t documents = 0;
    std::size_t manual_pages = 0;
    std::size_t guides = 0;
    std::size_t other = 0;
    std::size_t chunks = 0;
    std::size_t keywords = 0;
    struct Db {
        std::string name;
        std::string model_id;
        std::size_t records = 0;
        std::string path;
    };
    std::vector<Db> databases;

    nlohmann::json to_json() const;
};

struct BenchQuestion {
    std::string id;
    std::string question;
    std::vector<std::string> tags;
};

/// JSONL of {id, question, tags}. Ids must be unique.
std::vector<BenchQuestion> load_questions(const std::filesystem::path& path);

struct BenchItem {
    std::string question_id;
    AskMode mode = AskMode::rag_rerank;
    std::string record_id;
    std::string error;
    std::optional<TimingBreakdown> timing;
};

/// Binds corpus, index, providers and history into the ask pipeline.
class Engine {
public:
    explicit Engine(EngineConfig config);
    static std::unique_ptr<Engine> open(const std::filesystem::path& config_path);

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    /// Loads and chunks the corpus, writes chunks and keyword index, builds every database.
    IngestReport ingest();

    /// One pipeline run; appends exactly one record to history.
    AskResult ask(const std::string& question, const AskOptions& options = {});

    /// Every (question, mode) pair, at most `jobs` at a time. Failures are
    /// reported per item and do not stop the batch.
    std::vector<BenchItem> bench(const std::vector<BenchQuestion>& questions, const std::vector<AskMode>& modes,
                                 std::size_t jobs = 1);

    /// Reviewed drafting for the gateway: full pipeline, recorded with the thread id.
    DraftResult draft(const ReviewThread& thread, const std::string& query);

    HistoryStore& history() noexcept { return *history_; }
    const EngineConfig& config() const noexcept { return config_; }

    void set_continuation_provider(std::unique_ptr<ContinuationProvider> p);
    void set_embedding_provider(std::unique_ptr<EmbeddingProvider> p);
    void set_rerank_scorer(std::unique_ptr<RerankScorer> s);

private:
    struct Loaded {
        ChunkStore chunks;
        KeywordIndex keywords;
        VectorDatabase db;
        EmbeddingProvider* embedding = nullptr;
    };
    std::shared_ptr<const Loaded> loaded();
    std::unique_ptr<EmbeddingProvider> make_embedding_provider(const DatabaseConfig& db) const;

    EngineConfig config_;
    std::unique_ptr<HistoryStore> history_;
    std::unique_ptr<ContinuationProvider> continuation_;
    std::unique_ptr<EmbeddingProvider> embedding_;
    std::unique_ptr<RerankScorer> scorer_;
    std::mutex load_mu_;
    std::shared_ptr<const Loaded> loaded_;
};

} // namespace kba
