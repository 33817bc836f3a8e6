#pragma once

#include "kba/generate.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace kba {

enum class ConfigLabel { baseline, rag, rag_rerank, human };

std::string_view to_string(ConfigLabel label) noexcept;
ConfigLabel config_label_from_string(std::string_view s);
/// Column title used in reports ("RAG", "RAG+reranking", ...).
std::string_view display_name(ConfigLabel label) noexcept;

/// Rubric for answers, higher is better. Index = score value.
inline constexpr std::array<std::string_view, 5> kRubricLabels{
    "Nonsensical answer",
    "Incorrect or inaccurate statements (hallucinations)",
    "Correct material with only minor inaccuracies",
    "Answer is clear and correct",
    "Ideal answer, close to what an expert would respond",
};

/// Everything needed to re-run an interaction.
struct ConfigSnapshot {
    std::string continuation_model;
    std::string embedding_model;
    std::string database;
    std::size_t first_pass_k = 0;
    std::size_t final_l = 0;
    std::string keyword_matching;
    std::string scorer_id;
    bool degraded = false;
    std::string degraded_reason;
    double temperature = 0.0;
    nlohmann::json prompt_template = nlohmann::json::object();
};

struct RetrievedRef {
    std::string chunk_id;
    std::string link;
    double score = 0.0;
    std::string origin;
    bool pinned = false;
};

/// Character offsets into the answer marking a correct or incorrect portion.
struct SpanAnnotation {
    std::size_t start = 0;
    std::size_t end = 0;
    bool correct = true;
    std::string note;
};

struct RubricScore {
    int value = 0;
    std::string scorer_id;
    bool blind = false;
    std::string rationale;
    std::vector<SpanAnnotation> spans;
    std::string session_id;
    std::string timestamp;
};

struct InteractionRecord {
    std::string record_id;
    std::string timestamp;
    std::string question_id;
    std::string thread_id;
    std::string question;
    std::string rendered_prompt;
    std::string answer;
    ConfigLabel label = ConfigLabel::rag_rerank;
    ConfigSnapshot config;
    std::vector<RetrievedRef> retrieved;
    std::optional<TimingBreakdown> timing;
    std::vector<RubricScore> scores;
    /// Set on amendment records: the id of the record this one supersedes.
    std::string amends;

    /// Key used to line records up across configurations.
    const std::string& question_key() const { return question_id.empty() ? question : question_id; }
};

nlohmann::json to_json(const RubricScore& s);
RubricScore rubric_score_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InteractionRecord& r);
InteractionRecord record_from_json(const nlohmann::json& j);

void validate_rubric_value(int value);

struct RecordFilter {
    std::optional<ConfigLabel> label;
    std::string question_id;
    std::string thread_id;
    /// Case-insensitive substring over question and answer.
    std::string text;
    bool include_superseded = false;
};

/// Append-only JSONL log of interactions and scores with an in-memory index
/// rebuilt on open. One writer at a time; readers get consistent snapshots.
class HistoryStore {
public:
    /// An empty path keeps the store in memory only.
    explicit HistoryStore(std::filesystem::path log_path = {});

    HistoryStore(const HistoryStore&) = delete;
    HistoryStore& operator=(const HistoryStore&) = delete;

    /// Validates and persists. Assigns record_id and timestamp when empty.
    std::string append(InteractionRecord record);

    /// Scores submitted outside a blind session are always stored with blind=false.
    RubricScore add_score(const std::string& record_id, RubricScore score);

    std::optional<InteractionRecord> get(const std::string& record_id) const;
    std::vector<InteractionRecord> query(const RecordFilter& filter = {}) const;
    /// Newest non-superseded record for (question key, label).
    std::optional<InteractionRecord> latest(const std::string& question_key, ConfigLabel label) const;
    std::size_t size() const;

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    friend class ScoringSession;
    RubricScore store_score(const std::string& record_id, RubricScore score);
    void write_line(const nlohmann::json& line);
    void load();

    std::filesystem::path path_;
    mutable std::shared_mutex mu_;
    std::vector<InteractionRecord> records_;
    std::map<std::string, std::size_t, std::less<>> by_id_;
    std::map<std::string, std::string, std::less<>> superseded_by_;
    std::uint64_t next_seq_ = 1;
};

struct SessionItem {
    std::string item_id;
    std::size_t position = 0;
    std::string question;
    std::string answer;
};

/// Anonymized presentation of answers for blind scoring. Config labels,
/// model ids and scorer ids never leave the session object.
class ScoringSession {
public:
    const std::string& id() const noexcept { return id_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<SessionItem>& items() const noexcept { return items_; }

    /// The blinded view handed to scorers.
    nlohmann::json to_json() const;

    RubricScore submit(HistoryStore& store, const std::string& item_id, int value,
                       const std::string& scorer_id, const std::string& rationale = {},
                       std::vector<SpanAnnotation> spans = {});

    std::size_t scored_count() const;

private:
    friend ScoringSession blind_batch(const HistoryStore&, std::span<const std::string>,
                                      std::span<const ConfigLabel>, std::uint64_t);
    std::string id_;
    std::uint64_t seed_ = 0;
    std::vector<SessionItem> items_;
    std::map<std::string, std::string, std::less<>> item_to_record_;
    std::map<std::string, int, std::less<>> submitted_;
};

/// One item per (question, config) pair, shuffled reproducibly by `seed`.
/// Throws incomplete-matrix naming every missing pair.
ScoringSession blind_batch(const HistoryStore& store, std::span<const std::string> question_ids,
                           std::span<const ConfigLabel> configs, std::uint64_t seed);

enum class ScoreAggregation { designated, mean };

struct CompareOptions {
    /// Whose scores count. Empty: the most recent score on each record.
    std::string scorer_id;
    ScoreAggregation aggregation = ScoreAggregation::designated;
};

struct QuestionDelta {
    std::string question_id;
    double score_a = 0.0;
    double score_b = 0.0;
    double delta = 0.0;
};

struct Comparison {
    ConfigLabel config_a = ConfigLabel::baseline;
    ConfigLabel config_b = ConfigLabel::rag_rerank;
    ScoreAggregation aggregation = ScoreAggregation::designated;
    std::vector<QuestionDelta> rows;
    std::size_t improved = 0;
    std::size_t unchanged = 0;
    std::size_t regressed = 0;
    std::array<std::size_t, 5> histogram_a{};
    std::array<std::size_t, 5> histogram_b{};
};

/// Per-question score_b - score_a over every question answered under either config.
Comparison compare(const HistoryStore& store, ConfigLabel a, ConfigLabel b, const CompareOptions& options = {});
std::string render_comparison_text(const Comparison& c);
std::string render_comparison_csv(const Comparison& c);

struct TimingStat {
    double min = 0.0;
    double max = 0.0;
    double avg = 0.0;
    std::size_t count = 0;
};

struct LatencyColumn {
    ConfigLabel label = ConfigLabel::rag;
    TimingStat rag;
    TimingStat llm;
    /// avg RAG time / avg LLM time
    double rag_to_llm = 0.0;
};

struct LatencyReport {
    std::vector<LatencyColumn> columns;
};

/// Min/Max/Avg of RAG and LLM time per config. With no configs given, the
/// retrieval configs present in `records` get a column.
LatencyReport latency_report(std::span<const InteractionRecord> records,
                             std::span<const ConfigLabel> configs = {});
std::string render_latency_text(const LatencyReport& report);
std::string render_latency_csv(const LatencyReport& report);

} // namespace kba
