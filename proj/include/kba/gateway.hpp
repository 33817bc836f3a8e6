#pragma once

#include "kba/history.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace kba {

enum class ThreadState { incoming, drafted, revising, sent, discarded };
enum class Author { user, developer, assistant };
enum class ReviewAction { send, discard, revise };

std::string_view to_string(ThreadState s) noexcept;
std::string_view to_string(Author a) noexcept;
std::string_view to_string(ReviewAction a) noexcept;
ThreadState thread_state_from_string(std::string_view s);
Author author_from_string(std::string_view s);
ReviewAction review_action_from_string(std::string_view s);

inline bool is_terminal(ThreadState s) noexcept { return s == ThreadState::sent || s == ThreadState::discarded; }

struct Attachment {
    std::string name;
    std::string content_type = "text/plain";
    /// Decoded content. Only text attachments take part in drafting.
    std::string text;
};

struct ThreadMessage {
    std::string message_id;
    Author author = Author::user;
    std::string from;
    std::string body;
    std::vector<Attachment> attachments;
    std::string timestamp;
};

struct Draft {
    std::string text;
    std::string record_id;
    std::vector<RetrievedRef> context;
    std::string created_at;
};

struct SendOutcome {
    std::string signer;
    std::string sent_at;
};

struct ReviewThread {
    std::string thread_id;
    std::string subject;
    std::string thread_token;
    std::string reply_to;
    std::vector<ThreadMessage> messages;
    ThreadState state = ThreadState::incoming;
    std::optional<Draft> draft;
    /// Every interaction record drafted for this thread, oldest first.
    std::vector<std::string> record_ids;
    std::optional<SendOutcome> outcome;
    /// Direct-chat thread: answered without review, every answer watermarked.
    bool unvetted = false;
    /// Set when a reply reopened a finished conversation as a new round.
    std::string continues;
    std::string created_at;
    std::string updated_at;
};

nlohmann::json to_json(const ReviewThread& t);

/// What a transport hands to ingest.
struct InboundMessage {
    std::string message_id;
    std::string from;
    std::string subject;
    std::string body;
    /// Opaque conversation token (mail thread header, chat channel id).
    std::string thread_token;
    std::string in_reply_to;
    std::vector<Attachment> attachments;
    std::string timestamp;
};

class TransportAdapter {
public:
    virtual ~TransportAdapter() = default;
    virtual std::string name() const = 0;
    /// New inbound messages since the last poll. May return some again.
    virtual std::vector<InboundMessage> poll() = 0;
    virtual void deliver(const ReviewThread& thread, const std::string& text, const std::string& signer) = 0;
    virtual void notify(const std::string& channel, const nlohmann::json& event) = 0;
};

/// Deterministic in-process transport for tests.
class FakeAdapter final : public TransportAdapter {
public:
    struct Delivery {
        std::string thread_id;
        std::string text;
        std::string signer;
    };

    std::string name() const override { return "fake"; }
    std::vector<InboundMessage> poll() override;
    void deliver(const ReviewThread& thread, const std::string& text, const std::string& signer) override;
    void notify(const std::string& channel, const nlohmann::json& event) override;

    void push(InboundMessage m);
    /// When set, every poll returns all messages ever pushed.
    void set_redeliver(bool on) { redeliver_ = on; }
    /// The next `n` polls throw adapter-error.
    void fail_polls(int n) { failing_polls_ = n; }
    void fail_deliveries(bool on) { failing_deliveries_ = on; }

    std::vector<Delivery> deliveries() const;
    std::vector<nlohmann::json> notifications() const;
    int poll_calls() const;

private:
    mutable std::mutex mu_;
    std::vector<InboundMessage> all_;
    std::size_t cursor_ = 0;
    bool redeliver_ = false;
    int failing_polls_ = 0;
    bool failing_deliveries_ = false;
    int poll_calls_ = 0;
    std::vector<Delivery> deliveries_;
    std::vector<nlohmann::json> notifications_;
};

/// Mail spool on disk. Reads `new/`, moves handled files to `cur/`, writes
/// replies as .eml files under `outbox/` and notifications to notifications.jsonl.
class MaildirAdapter final : public TransportAdapter {
public:
    MaildirAdapter(std::filesystem::path root, std::string bot_address);

    std::string name() const override { return "maildir"; }
    std::vector<InboundMessage> poll() override;
    void deliver(const ReviewThread& thread, const std::string& text, const std::string& signer) override;
    void notify(const std::string& channel, const nlohmann::json& event) override;

private:
    std::filesystem::path root_;
    std::string bot_address_;
    std::mutex mu_;
};

/// Parses an RFC 5322 message: headers, a text/plain body and, for
/// multipart/mixed, attachments. Handles base64 and quoted-printable parts.
InboundMessage parse_email(std::string_view raw);

/// Outbound-only transport posting JSON to `{base}/deliver` and `{base}/notify`.
class WebhookAdapter final : public TransportAdapter {
public:
    WebhookAdapter(std::string base_url, std::string bearer_env = {});

    std::string name() const override { return "webhook"; }
    std::vector<InboundMessage> poll() override { return {}; }
    void deliver(const ReviewThread& thread, const std::string& text, const std::string& signer) override;
    void notify(const std::string& channel, const nlohmann::json& event) override;

private:
    std::string base_url_;
    std::string bearer_env_;
};

/// Strips "Re:"/"Fwd:" prefixes (repeated, any case) and collapses whitespace.
std::string normalize_subject(std::string_view subject);
/// Drops `>`-quoted lines and everything from an "On ... wrote:" or
/// "-----Original Message-----" marker onward.
std::string strip_quoted_reply(std::string_view body);
/// Replaces Proofpoint URL Defense v1/v2/v3 wrappers with the original URLs.
std::string revert_protected_urls(std::string_view text);
/// "Name <a@b>" -> "a@b", lowercased.
std::string email_address(std::string_view from);

struct GatewayEvent {
    std::uint64_t seq = 0;
    std::string type;
    std::string thread_id;
    nlohmann::json data = nlohmann::json::object();
};

/// Ordered in-memory event log with blocking waits, backing the SSE stream.
class EventBus {
public:
    explicit EventBus(std::size_t capacity = 1024) : capacity_(capacity) {}

    std::uint64_t publish(std::string type, std::string thread_id, nlohmann::json data = nlohmann::json::object());
    /// Events with seq > after, waiting up to `timeout` for the first one.
    std::vector<GatewayEvent> since(std::uint64_t after, std::chrono::milliseconds timeout = {});
    std::uint64_t last_seq() const;
    void close();

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<GatewayEvent> events_;
    std::size_t capacity_;
    std::uint64_t next_ = 1;
    bool closed_ = false;
};

struct DraftResult {
    std::string answer;
    std::string record_id;
    std::vector<RetrievedRef> context;
};

/// Runs the full pipeline on the conversation context and records it.
using DraftFunction = std::function<DraftResult(const ReviewThread& thread, const std::string& query)>;

struct GatewayOptions {
    std::string bot_address;
    std::string review_channel = "review";
    std::string unvetted_watermark =
        "[Unreviewed answer generated automatically. It may contain mistakes; verify before relying on it.]";
    int poll_attempts = 3;
    std::chrono::milliseconds poll_backoff{200};
};

/// The review state machine:
///   incoming --draft--> drafted --send--> sent
///   revising --draft--> drafted --discard--> discarded
///                       drafted --revise--> revising
/// Transitions on one thread are serialized; a racing loser gets illegal-transition.
class Gateway {
public:
    Gateway(TransportAdapter& adapter, DraftFunction draft_fn, GatewayOptions options = {});

    /// Polls the adapter (with retries) and files the messages. Returns touched thread ids.
    std::vector<std::string> ingest();
    /// Files one message as if it had been polled.
    std::string receive(InboundMessage message);

    ReviewThread draft(const std::string& thread_id);
    ReviewThread act(const std::string& thread_id, ReviewAction action, const std::string& actor,
                     const std::string& guidance = {});

    /// Direct chat: answers at once with a watermark, bypassing review. Pass an
    /// empty thread_id to start a conversation.
    ReviewThread ask_direct(const std::string& question, const std::string& asker,
                            const std::string& thread_id = {});

    std::vector<ReviewThread> threads() const;
    std::optional<ReviewThread> thread(const std::string& thread_id) const;

    /// Subject, messages and text attachments in order; the query used for drafting.
    static std::string conversation_query(const ReviewThread& thread);

    EventBus& events() noexcept { return events_; }
    TransportAdapter& adapter() noexcept { return adapter_; }
    const std::string& last_ingest_error() const noexcept { return last_ingest_error_; }

private:
    std::string file_message(InboundMessage message);
    ReviewThread& at(const std::string& thread_id);
    void publish(const std::string& type, const ReviewThread& t);

    TransportAdapter& adapter_;
    DraftFunction draft_fn_;
    GatewayOptions options_;
    EventBus events_;

    mutable std::mutex mu_;
    std::map<std::string, ReviewThread> threads_;
    std::vector<std::string> order_;
    std::map<std::string, std::string> key_to_thread_;
    std::map<std::string, std::string> message_to_thread_;
    std::set<std::string> seen_messages_;
    std::set<std::string> busy_;
    std::string last_ingest_error_;
};

} // namespace kba
