#include "kba/history.hpp"

#include "kba/error.hpp"
#include "kba/util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

namespace kba {

using nlohmann::json;

std::string_view to_string(ConfigLabel label) noexcept {
    switch (label) {
    case ConfigLabel::baseline: return "baseline";
    case ConfigLabel::rag: return "rag";
    case ConfigLabel::rag_rerank: return "rag_rerank";
    case ConfigLabel::human: return "human";
    }
    return "baseline";
}

ConfigLabel config_label_from_string(std::string_view s) {
    if (s == "baseline") return ConfigLabel::baseline;
    if (s == "rag") return ConfigLabel::rag;
    if (s == "rag_rerank" || s == "rag-rerank") return ConfigLabel::rag_rerank;
    if (s == "human") return ConfigLabel::human;
    throw Error(Errc::invalid_argument, "unknown config label '" + std::string(s) +
                                            "' (expected baseline, rag, rag_rerank or human)");
}

std::string_view display_name(ConfigLabel label) noexcept {
    switch (label) {
    case ConfigLabel::baseline: return "Baseline";
    case ConfigLabel::rag: return "RAG";
    case ConfigLabel::rag_rerank: return "RAG+reranking";
    case ConfigLabel::human: return "Human";
    }
    return "Baseline";
}

void validate_rubric_value(int value) {
    if (value < 0 || value > 4) {
        throw Error(Errc::validation_error, "rubric score must be an integer in 0..4, got " + std::to_string(value));
    }
}

json to_json(const RubricScore& s) {
    json spans = json::array();
    for (const auto& sp : s.spans) {
        json o{{"start", sp.start}, {"end", sp.end}, {"correct", sp.correct}};
        if (!sp.note.empty()) o["note"] = sp.note;
        spans.push_back(std::move(o));
    }
    json j{{"value", s.value}, {"scorer_id", s.scorer_id}, {"blind", s.blind}, {"timestamp", s.timestamp}};
    if (!s.rationale.empty()) j["rationale"] = s.rationale;
    if (!spans.empty()) j["spans"] = spans;
    if (!s.session_id.empty()) j["session_id"] = s.session_id;
    return j;
}

RubricScore rubric_score_from_json(const json& j) {
    RubricScore s;
    s.value = j.at("value").get<int>();
    s.scorer_id = j.value("scorer_id", "");
    s.blind = j.value("blind", false);
    s.rationale = j.value("rationale", "");
    s.session_id = j.value("session_id", "");
    s.timestamp = j.value("timestamp", "");
    if (j.contains("spans")) {
        for (const auto& sp : j.at("spans")) {
            s.spans.push_back({sp.at("start").get<std::size_t>(), sp.at("end").get<std::size_t>(),
                               sp.value("correct", true), sp.value("note", "")});
        }
    }
    return s;
}

json to_json(const InteractionRecord& r) {
    json cfg{{"continuation_model", r.config.continuation_model},
             {"embedding_model", r.config.embedding_model},
             {"database", r.config.database},
             {"first_pass_k", r.config.first_pass_k},
             {"final_l", r.config.final_l},
             {"keyword_matching", r.config.keyword_matching},
             {"scorer_id", r.config.scorer_id},
             {"degraded", r.config.degraded},
             {"temperature", r.config.temperature},
             {"prompt_template", r.config.prompt_template}};
    if (!r.config.degraded_reason.empty()) cfg["degraded_reason"] = r.config.degraded_reason;
    json retrieved = json::array();
    for (const auto& ref : r.retrieved) {
        retrieved.push_back({{"chunk_id", ref.chunk_id},
                             {"link", ref.link},
                             {"score", ref.score},
                             {"origin", ref.origin},
                             {"pinned", ref.pinned}});
    }
    json scores = json::array();
    for (const auto& s : r.scores) scores.push_back(to_json(s));
    json j{{"record_id", r.record_id},
           {"timestamp", r.timestamp},
           {"question", r.question},
           {"rendered_prompt", r.rendered_prompt},
           {"answer", r.answer},
           {"config_label", to_string(r.label)},
           {"config", cfg},
           {"retrieved", retrieved},
           {"scores", scores}};
    if (r.timing) {
        j["timing"] = {{"rag_seconds", r.timing->rag_seconds},
                       {"llm_seconds", r.timing->llm_seconds},
                       {"total_seconds", r.timing->total_seconds}};
    }
    if (!r.question_id.empty()) j["question_id"] = r.question_id;
    if (!r.thread_id.empty()) j["thread_id"] = r.thread_id;
    if (!r.amends.empty()) j["amends"] = r.amends;
    return j;
}

InteractionRecord record_from_json(const json& j) {
    InteractionRecord r;
    r.record_id = j.value("record_id", "");
    r.timestamp = j.value("timestamp", "");
    r.question_id = j.value("question_id", "");
    r.thread_id = j.value("thread_id", "");
    r.question = j.at("question").get<std::string>();
    r.rendered_prompt = j.value("rendered_prompt", "");
    r.answer = j.at("answer").get<std::string>();
    r.label = config_label_from_string(j.at("config_label").get<std::string>());
    r.amends = j.value("amends", "");
    if (j.contains("config")) {
        const auto& c = j.at("config");
        r.config.continuation_model = c.value("continuation_model", "");
        r.config.embedding_model = c.value("embedding_model", "");
        r.config.database = c.value("database", "");
        r.config.first_pass_k = c.value("first_pass_k", std::size_t{0});
        r.config.final_l = c.value("final_l", std::size_t{0});
        r.config.keyword_matching = c.value("keyword_matching", "");
        r.config.scorer_id = c.value("scorer_id", "");
        r.config.degraded = c.value("degraded", false);
        r.config.degraded_reason = c.value("degraded_reason", "");
        r.config.temperature = c.value("temperature", 0.0);
        r.config.prompt_template = c.value("prompt_template", json::object());
    }
    if (j.contains("retrieved")) {
        for (const auto& ref : j.at("retrieved")) {
            r.retrieved.push_back({ref.value("chunk_id", ""), ref.value("link", ""), ref.value("score", 0.0),
                                   ref.value("origin", ""), ref.value("pinned", false)});
        }
    }
    if (j.contains("timing") && !j.at("timing").is_null()) {
        const auto& t = j.at("timing");
        r.timing = TimingBreakdown{t.at("rag_seconds").get<double>(), t.at("llm_seconds").get<double>(),
                                   t.at("total_seconds").get<double>()};
    }
    if (j.contains("scores")) {
        for (const auto& s : j.at("scores")) r.scores.push_back(rubric_score_from_json(s));
    }
    return r;
}

namespace {

void validate_record(const InteractionRecord& r) {
    if (trim(r.question).empty()) throw Error(Errc::validation_error, "record has no question");
    if (r.answer.empty()) throw Error(Errc::validation_error, "record has no answer");
    if (r.label != ConfigLabel::human) {
        if (!r.timing) throw Error(Errc::validation_error, "record has no timing");
        if (r.timing->rag_seconds < 0 || r.timing->llm_seconds < 0 || r.timing->total_seconds < 0) {
            throw Error(Errc::validation_error, "record timing must be non-negative");
        }
    }
    for (const auto& s : r.scores) validate_rubric_value(s.value);
}

std::uint64_t seq_of(const std::string& id) {
    if (id.rfind("rec-", 0) != 0) return 0;
    try {
        return std::stoull(id.substr(4));
    } catch (...) {
        return 0;
    }
}

} // namespace

HistoryStore::HistoryStore(std::filesystem::path log_path) : path_(std::move(log_path)) {
    if (!path_.empty()) load();
}

void HistoryStore::load() {
    std::error_code ec;
    if (!std::filesystem::exists(path_, ec)) return;
    const auto text = read_text_file(path_);
    std::size_t lineno = 0;
    for (const auto& line : split(text, '\n')) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            const auto type = j.value("type", "record");
            if (type == "record") {
                auto r = record_from_json(j.at("record"));
                next_seq_ = std::max(next_seq_, seq_of(r.record_id) + 1);
                if (!r.amends.empty()) superseded_by_[r.amends] = r.record_id;
                by_id_[r.record_id] = records_.size();
                records_.push_back(std::move(r));
            } else if (type == "score") {
                auto it = by_id_.find(j.at("record_id").get<std::string>());
                if (it == by_id_.end()) throw Error(Errc::format_error, "score for unknown record");
                records_[it->second].scores.push_back(rubric_score_from_json(j.at("score")));
            }
        } catch (const std::exception& e) {
            throw Error(Errc::format_error,
                        path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void HistoryStore::write_line(const json& line) {
    if (path_.empty()) return;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot append to " + path_.string());
    out << line.dump() << '\n';
    out.flush();
    if (!out) throw Error(Errc::io_error, "write to " + path_.string() + " failed");
}

std::string HistoryStore::append(InteractionRecord record) {
    validate_record(record);
    std::unique_lock lock(mu_);
    if (record.record_id.empty()) {
        char buf[32];
        do {
            std::snprintf(buf, sizeof buf, "rec-%06llu", static_cast<unsigned long long>(next_seq_++));
        } while (by_id_.count(buf));
        record.record_id = buf;
    } else if (by_id_.count(record.record_id)) {
        throw Error(Errc::duplicate_record, "record " + record.record_id + " already exists");
    } else {
        next_seq_ = std::max(next_seq_, seq_of(record.record_id) + 1);
    }
    if (!record.amends.empty()) {
        if (!by_id_.count(record.amends)) {
            throw Error(Errc::not_found, "amended record " + record.amends + " does not exist");
        }
    }
    if (record.timestamp.empty()) record.timestamp = now_iso8601();

    write_line({{"type", "record"}, {"record", to_json(record)}});
    if (!record.amends.empty()) superseded_by_[record.amends] = record.record_id;
    by_id_[record.record_id] = records_.size();
    records_.push_back(record);
    return record.record_id;
}

RubricScore HistoryStore::store_score(const std::string& record_id, RubricScore score) {
    validate_rubric_value(score.value);
    if (trim(score.scorer_id).empty()) throw Error(Errc::validation_error, "score needs a scorer_id");
    for (const auto& sp : score.spans) {
        if (sp.start > sp.end) throw Error(Errc::validation_error, "span start after end");
    }
    std::unique_lock lock(mu_);
    auto it = by_id_.find(record_id);
    if (it == by_id_.end()) throw Error(Errc::not_found, "no record " + record_id);
    const auto answer_len = utf8_length(records_[it->second].answer);
    for (const auto& sp : score.spans) {
        if (sp.end > answer_len) throw Error(Errc::validation_error, "span exceeds answer length");
    }
    if (score.timestamp.empty()) score.timestamp = now_iso8601();
    write_line({{"type", "score"}, {"record_id", record_id}, {"score", to_json(score)}});
    records_[it->second].scores.push_back(score);
    return score;
}

RubricScore HistoryStore::add_score(const std::string& record_id, RubricScore score) {
    score.blind = false;
    score.session_id.clear();
    return store_score(record_id, std::move(score));
}

std::optional<InteractionRecord> HistoryStore::get(const std::string& record_id) const {
    std::shared_lock lock(mu_);
    auto it = by_id_.find(record_id);
    if (it == by_id_.end()) return std::nullopt;
    return records_[it->second];
}

std::vector<InteractionRecord> HistoryStore::query(const RecordFilter& f) const {
    std::shared_lock lock(mu_);
    const auto needle = to_lower_ascii(f.text);
    std::vector<InteractionRecord> out;
    for (const auto& r : records_) {
        if (!f.include_superseded && superseded_by_.count(r.record_id)) continue;
        if (f.label && r.label != *f.label) continue;
        if (!f.question_id.empty() && r.question_key() != f.question_id) continue;
        if (!f.thread_id.empty() && r.thread_id != f.thread_id) continue;
        if (!needle.empty() && to_lower_ascii(r.question).find(needle) == std::string::npos &&
            to_lower_ascii(r.answer).find(needle) == std::string::npos) {
            continue;
        }
        out.push_back(r);
    }
    return out;
}

std::optional<InteractionRecord> HistoryStore::latest(const std::string& question_key, ConfigLabel label) const {
    std::shared_lock lock(mu_);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->label == label && it->question_key() == question_key && !superseded_by_.count(it->record_id)) {
            return *it;
        }
    }
    return std::nullopt;
}

std::size_t HistoryStore::size() const {
    std::shared_lock lock(mu_);
    return records_.size();
}

json ScoringSession::to_json() const {
    json items = json::array();
    for (const auto& it : items_) {
        items.push_back({{"item_id", it.item_id},
                         {"position", it.position},
                         {"question", it.question},
                         {"answer", it.answer}});
    }
    json rubric = json::array();
    for (std::size_t v = 0; v < kRubricLabels.size(); ++v) {
        rubric.push_back({{"value", v}, {"label", kRubricLabels[v]}});
    }
    return {{"session_id", id_}, {"seed", seed_}, {"rubric", rubric}, {"items", items}};
}

RubricScore ScoringSession::submit(HistoryStore& store, const std::string& item_id, int value,
                                   const std::string& scorer_id, const std::string& rationale,
                                   std::vector<SpanAnnotation> spans) {
    auto it = item_to_record_.find(item_id);
    if (it == item_to_record_.end()) {
        throw Error(Errc::not_found, "session " + id_ + " has no item " + item_id);
    }
    RubricScore s;
    s.value = value;
    s.scorer_id = scorer_id;
    s.blind = true;
    s.rationale = rationale;
    s.spans = std::move(spans);
    s.session_id = id_;
    auto stored = store.store_score(it->second, std::move(s));
    submitted_[item_id] = value;
    return stored;
}

std::size_t ScoringSession::scored_count() const { return submitted_.size(); }

ScoringSession blind_batch(const HistoryStore& store, std::span<const std::string> question_ids,
                           std::span<const ConfigLabel> configs, std::uint64_t seed) {
    if (question_ids.empty() || configs.empty()) {
        throw Error(Errc::empty_selection, "blind batch needs at least one question and one config");
    }
    std::vector<std::pair<std::string, InteractionRecord>> picked;
    std::vector<std::string> gaps;
    std::string id_material = std::to_string(seed);
    for (const auto& q : question_ids) {
        id_material += "|" + q;
        for (auto c : configs) {
            if (auto r = store.latest(q, c)) {
                picked.emplace_back(q, std::move(*r));
            } else {
                gaps.push_back(q + "/" + std::string(to_string(c)));
            }
        }
    }
    for (auto c : configs) id_material += "|" + std::string(to_string(c));
    if (!gaps.empty()) {
        throw Error(Errc::incomplete_matrix, "no record for: " + join(gaps, ", "));
    }

    // Fisher-Yates with a fixed engine so a seed means the same order everywhere.
    std::mt19937_64 rng(seed);
    for (std::size_t i = picked.size(); i > 1; --i) {
        std::swap(picked[i - 1], picked[rng() % i]);
    }

    ScoringSession s;
    s.seed_ = seed;
    s.id_ = "sess-" + sha256_hex(id_material).substr(0, 12);
    for (std::size_t i = 0; i < picked.size(); ++i) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "item-%02zu", i + 1);
        s.items_.push_back({buf, i + 1, picked[i].second.question, picked[i].second.answer});
        s.item_to_record_[buf] = picked[i].second.record_id;
    }
    return s;
}

namespace {

std::optional<double> record_score(const InteractionRecord& r, const CompareOptions& o) {
    if (o.aggregation == ScoreAggregation::designated) {
        for (auto it = r.scores.rbegin(); it != r.scores.rend(); ++it) {
            if (o.scorer_id.empty() || it->scorer_id == o.scorer_id) return it->value;
        }
        return std::nullopt;
    }
    std::map<std::string, int> latest_by_scorer;
    for (const auto& s : r.scores) latest_by_scorer[s.scorer_id] = s.value;
    if (latest_by_scorer.empty()) return std::nullopt;
    double sum = 0.0;
    for (const auto& [who, v] : latest_by_scorer) sum += v;
    return std::round(sum / static_cast<double>(latest_by_scorer.size()) * 10.0) / 10.0;
}

std::string fmt_score(double v, ScoreAggregation agg) {
    char buf[32];
    if (agg == ScoreAggregation::mean) {
        std::snprintf(buf, sizeof buf, "%.1f", v);
    } else {
        std::snprintf(buf, sizeof buf, "%d", static_cast<int>(std::lround(v)));
    }
    return buf;
}

std::string fmt_delta(double v, ScoreAggregation agg) {
    auto s = fmt_score(v, agg);
    return v > 0 ? "+" + s : s;
}

std::size_t bucket(double v) { return static_cast<std::size_t>(std::clamp<long>(std::lround(v), 0, 4)); }

} // namespace

Comparison compare(const HistoryStore& store, ConfigLabel a, ConfigLabel b, const CompareOptions& options) {
    Comparison c;
    c.config_a = a;
    c.config_b = b;
    c.aggregation = options.aggregation;

    std::vector<std::string> keys;
    std::set<std::string> seen;
    for (const auto& r : store.query()) {
        if ((r.label == a || r.label == b) && seen.insert(r.question_key()).second) keys.push_back(r.question_key());
    }
    if (keys.empty()) {
        throw Error(Errc::empty_selection, "no records for " + std::string(to_string(a)) + " or " +
                                               std::string(to_string(b)));
    }

    std::vector<std::string> gaps;
    for (const auto& key : keys) {
        auto ra = store.latest(key, a);
        auto rb = store.latest(key, b);
        std::optional<double> sa = ra ? record_score(*ra, options) : std::nullopt;
        std::optional<double> sb = rb ? record_score(*rb, options) : std::nullopt;
        if (!sa) gaps.push_back(key + "/" + std::string(to_string(a)));
        if (!sb) gaps.push_back(key + "/" + std::string(to_string(b)));
        if (!sa || !sb) continue;
        const double va = sa.value_or(0.0);
        const double vb = sb.value_or(0.0);
        QuestionDelta d{key, va, vb, vb - va};
        if (d.delta > 0) {
            ++c.improved;
        } else if (d.delta < 0) {
            ++c.regressed;
        } else {
            ++c.unchanged;
        }
        ++c.histogram_a[bucket(d.score_a)];
        ++c.histogram_b[bucket(d.score_b)];
        c.rows.push_back(std::move(d));
    }
    if (!gaps.empty()) {
        throw Error(Errc::incomplete_scores, "unscored: " + join(gaps, ", "));
    }
    return c;
}

std::string render_comparison_text(const Comparison& c) {
    const std::string na(display_name(c.config_a));
    const std::string nb(display_name(c.config_b));
    std::size_t qw = 8;
    for (const auto& r : c.rows) qw = std::max(qw, r.question_id.size());
    const int wa = static_cast<int>(std::max<std::size_t>(na.size(), 5));
    const int wb = static_cast<int>(std::max<std::size_t>(nb.size(), 5));

    std::ostringstream out;
    char line[512];
    out << "Score comparison: " << na << " -> " << nb << " (" << c.rows.size() << " questions)\n";
    std::snprintf(line, sizeof line, "%-*s  %*s  %*s  %5s\n", static_cast<int>(qw), "question", wa, na.c_str(), wb,
                  nb.c_str(), "delta");
    out << line;
    for (const auto& r : c.rows) {
        std::snprintf(line, sizeof line, "%-*s  %*s  %*s  %5s\n", static_cast<int>(qw), r.question_id.c_str(), wa,
                      fmt_score(r.score_a, c.aggregation).c_str(), wb, fmt_score(r.score_b, c.aggregation).c_str(),
                      fmt_delta(r.delta, c.aggregation).c_str());
        out << line;
    }
    out << "\nimproved=" << c.improved << " unchanged=" << c.unchanged << " regressed=" << c.regressed << "\n";

    const int hw = static_cast<int>(std::max(na.size(), nb.size()));
    std::snprintf(line, sizeof line, "\n%-*s  %4s %4s %4s %4s %4s\n", hw, "histogram", "0", "1", "2", "3", "4");
    out << line;
    for (const auto& [name, h] : {std::pair{na, c.histogram_a}, std::pair{nb, c.histogram_b}}) {
        std::snprintf(line, sizeof line, "%-*s  %4zu %4zu %4zu %4zu %4zu\n", hw, name.c_str(), h[0], h[1], h[2],
                      h[3], h[4]);
        out << line;
    }
    out << "\nfinal scores (" << nb << "):";
    for (int v = 4; v >= 0; --v) {
        out << (v == 4 ? " " : ", ") << "score-" << v << " count=" << c.histogram_b[static_cast<std::size_t>(v)];
    }
    out << "\n";
    return out.str();
}

std::string render_comparison_csv(const Comparison& c) {
    std::ostringstream out;
    out << "question_id," << to_string(c.config_a) << "," << to_string(c.config_b) << ",delta\n";
    for (const auto& r : c.rows) {
        std::string q = r.question_id;
        if (q.find_first_of(",\"\n") != std::string::npos) {
            std::string esc = "\"";
            for (char ch : q) esc += ch == '"' ? std::string("\"\"") : std::string(1, ch);
            q = esc + "\"";
        }
        out << q << "," << fmt_score(r.score_a, c.aggregation) << "," << fmt_score(r.score_b, c.aggregation) << ","
            << fmt_score(r.delta, c.aggregation) << "\n";
    }
    return out.str();
}

LatencyReport latency_report(std::span<const InteractionRecord> records, std::span<const ConfigLabel> configs) {
    std::vector<ConfigLabel> labels(configs.begin(), configs.end());
    if (labels.empty()) {
        for (auto l : {ConfigLabel::rag, ConfigLabel::rag_rerank}) {
            if (std::any_of(records.begin(), records.end(),
                            [&](const InteractionRecord& r) { return r.label == l && r.timing; })) {
                labels.push_back(l);
            }
        }
    }
    if (labels.empty()) {
        throw Error(Errc::empty_selection, "no timed records to report on");
    }
    LatencyReport rep;
    for (auto l : labels) {
        LatencyColumn col;
        col.label = l;
        double rag_sum = 0.0;
        double llm_sum = 0.0;
        col.rag.min = col.llm.min = std::numeric_limits<double>::infinity();
        col.rag.max = col.llm.max = -std::numeric_limits<double>::infinity();
        for (const auto& r : records) {
            if (r.label != l || !r.timing) continue;
            col.rag.min = std::min(col.rag.min, r.timing->rag_seconds);
            col.rag.max = std::max(col.rag.max, r.timing->rag_seconds);
            col.llm.min = std::min(col.llm.min, r.timing->llm_seconds);
            col.llm.max = std::max(col.llm.max, r.timing->llm_seconds);
            rag_sum += r.timing->rag_seconds;
            llm_sum += r.timing->llm_seconds;
            ++col.rag.count;
        }
        if (col.rag.count == 0) {
            throw Error(Errc::empty_selection, "no timed records for " + std::string(to_string(l)));
        }
        col.llm.count = col.rag.count;
        col.rag.avg = rag_sum / static_cast<double>(col.rag.count);
        col.llm.avg = llm_sum / static_cast<double>(col.llm.count);
        col.rag_to_llm = col.llm.avg > 0 ? col.rag.avg / col.llm.avg : 0.0;
        rep.columns.push_back(col);
    }
    return rep;
}

std::string render_latency_text(const LatencyReport& report) {
    constexpr int label_w = 14;
    constexpr int cell_w = 8;
    std::ostringstream out;
    char buf[128];

    out << std::string(label_w, ' ');
    for (const auto& col : report.columns) {
        std::string name(display_name(col.label));
        const int group_w = 3 * cell_w;
        const int pad = std::max(0, (group_w - static_cast<int>(name.size())) / 2);
        std::string cell = std::string(static_cast<std::size_t>(pad), ' ') + name;
        cell.resize(static_cast<std::size_t>(std::max<int>(group_w, static_cast<int>(cell.size()))), ' ');
        out << cell;
    }
    out << "\n" << std::string(label_w, ' ');
    for (std::size_t i = 0; i < report.columns.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%*s%*s%*s", cell_w, "Min", cell_w, "Max", cell_w, "Avg");
        out << buf;
    }
    out << "\n";
    auto row = [&](const char* name, auto pick) {
        std::snprintf(buf, sizeof buf, "%-*s", label_w, name);
        out << buf;
        for (const auto& col : report.columns) {
            const TimingStat& st = pick(col);
            std::snprintf(buf, sizeof buf, "%*.2f%*.2f%*.2f", cell_w, st.min, cell_w, st.max, cell_w, st.avg);
            out << buf;
        }
        out << "\n";
    };
    row("RAG time", [](const LatencyColumn& c) -> const TimingStat& { return c.rag; });
    row("LLM response", [](const LatencyColumn& c) -> const TimingStat& { return c.llm; });

    out << "\nRAG/LLM average time ratio:";
    for (std::size_t i = 0; i < report.columns.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s %s %.1f%%", i ? "," : "",
                      std::string(display_name(report.columns[i].label)).c_str(),
                      report.columns[i].rag_to_llm * 100.0);
        out << buf;
    }
    out << "\nrecords per column:";
    for (std::size_t i = 0; i < report.columns.size(); ++i) {
        out << (i ? ", " : " ") << display_name(report.columns[i].label) << " " << report.columns[i].rag.count;
    }
    out << "\n";
    return out.str();
}

std::string render_latency_csv(const LatencyReport& report) {
    std::ostringstream out;
    out << "row";
    for (const auto& col : report.columns) {
        for (const char* s : {"Min", "Max", "Avg"}) out << "," << display_name(col.label) << " " << s;
    }
    out << "\n";
    char buf[64];
    for (int r = 0; r < 2; ++r) {
        out << (r == 0 ? "RAG time" : "LLM response");
        for (const auto& col : report.columns) {
            const auto& st = r == 0 ? col.rag : col.llm;
            std::snprintf(buf, sizeof buf, ",%.2f,%.2f,%.2f", st.min, st.max, st.avg);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

} // namespace kba
