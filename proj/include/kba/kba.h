/*
 * kbassist C API.
 *
 * Every call returns a kba_status. On failure kba_last_error() returns a
 * message describing the most recent failure on the calling thread. Strings
 * returned through char** out-parameters are heap-allocated and must be
 * released with kba_free(). Handles are opaque and released with their
 * matching close/stop call.
 */
#ifndef KBA_KBA_H
#define KBA_KBA_H

#include <stdint.h>

#if defined(_WIN32)
#define KBA_API __declspec(dllexport)
#else
#define KBA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kba_status {
    KBA_OK = 0,
    KBA_ERR_INVALID_ARGUMENT = 1,
    KBA_ERR_INVALID_CONFIG = 2,
    KBA_ERR_CORPUS_NOT_FOUND = 3,
    KBA_ERR_EMPTY_CORPUS = 4,
    KBA_ERR_INVALID_DOCUMENT = 5,
    KBA_ERR_DUPLICATE_KEYWORD = 6,
    KBA_ERR_EMPTY_INPUT = 7,
    KBA_ERR_PROVIDER = 8,
    KBA_ERR_PROVIDER_TIMEOUT = 9,
    KBA_ERR_PROVIDER_CONTRACT = 10,
    KBA_ERR_MODEL_MISMATCH = 11,
    KBA_ERR_IO = 12,
    KBA_ERR_FORMAT = 13,
    KBA_ERR_QUERY_TOO_LONG = 14,
    KBA_ERR_NOT_FOUND = 15,
    KBA_ERR_DUPLICATE_RECORD = 16,
    KBA_ERR_VALIDATION = 17,
    KBA_ERR_INCOMPLETE_MATRIX = 18,
    KBA_ERR_INCOMPLETE_SCORES = 19,
    KBA_ERR_EMPTY_SELECTION = 20,
    KBA_ERR_ILLEGAL_TRANSITION = 21,
    KBA_ERR_MISSING_SIGNER = 22,
    KBA_ERR_HOOK_UNAVAILABLE = 23,
    KBA_ERR_ADAPTER = 24,
    KBA_ERR_INTERNAL = 100
} kba_status;

typedef struct kba_engine kba_engine;
typedef struct kba_session kba_session;
typedef struct kba_server kba_server;

KBA_API const char* kba_version(void);
/* Stable kebab-case name, e.g. "illegal-transition". */
KBA_API const char* kba_status_name(kba_status status);
KBA_API const char* kba_last_error(void);
KBA_API void kba_free(char* str);

KBA_API kba_status kba_engine_open(const char* config_path, kba_engine** out);
/* Relative paths inside the config resolve against base_dir (NULL: cwd). */
KBA_API kba_status kba_engine_open_json(const char* config_json, const char* base_dir, kba_engine** out);
KBA_API void kba_engine_close(kba_engine* engine);

/* Writes {documents, manual_pages, guides, other, chunks, keywords, databases[]}. */
KBA_API kba_status kba_ingest(kba_engine* engine, char** report_json);

/*
 * options_json (may be NULL): {"mode": "baseline"|"rag"|"rag-rerank",
 * "question_id": str, "check_hook": str}. Writes {record_id, mode, answer,
 * html, timing{rag_seconds, llm_seconds, total_seconds}, context[],
 * context_blocks, checks[], degraded}.
 */
KBA_API kba_status kba_ask(kba_engine* engine, const char* question, const char* options_json, char** result_json);

/* modes_csv like "baseline,rag,rag-rerank". Writes {items[], failed}. */
KBA_API kba_status kba_bench(kba_engine* engine, const char* questions_path, const char* modes_csv, unsigned jobs,
                             char** result_json);

/* Non-blind score straight onto a record. */
KBA_API kba_status kba_score_add(kba_engine* engine, const char* record_id, int value, const char* scorer_id,
                                 const char* rationale);
KBA_API kba_status kba_record_get(kba_engine* engine, const char* record_id, char** record_json);

/* scorer_id may be NULL. mean != 0 averages every scorer's latest score. */
KBA_API kba_status kba_report_compare(kba_engine* engine, const char* config_a, const char* config_b,
                                      const char* scorer_id, int mean, int csv, char** text);
/* configs_csv NULL or "" selects the retrieval configs (rag, rag_rerank) present in history. */
KBA_API kba_status kba_report_latency(kba_engine* engine, const char* configs_csv, int csv, char** text);

/* question_ids_csv NULL or "" selects every question answered under all configs. */
KBA_API kba_status kba_session_open(kba_engine* engine, const char* question_ids_csv, const char* configs_csv,
                                    uint64_t seed, kba_session** out);
/* Blinded view: {session_id, seed, rubric[], items[{item_id, position, question, answer}]}. */
KBA_API kba_status kba_session_items(kba_session* session, char** json);
KBA_API kba_status kba_session_submit(kba_session* session, const char* item_id, int value, const char* scorer_id,
                                      const char* rationale);
KBA_API void kba_session_close(kba_session* session);

/* bind NULL and port < 0 take the config values; port 0 picks a free port. */
KBA_API kba_status kba_server_start(kba_engine* engine, const char* bind, int port, kba_server** out,
                                    int* bound_port);
/* Blocks until SIGINT or SIGTERM; the signals must already be blocked in all threads. */
KBA_API kba_status kba_server_wait_signal(kba_server* server, int* signal_number);
KBA_API void kba_server_stop(kba_server* server);

KBA_API kba_status kba_render_answer(const char* markdown, char** html);

#ifdef __cplusplus
}
#endif

#endif
