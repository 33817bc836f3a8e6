#include "kba/gateway.hpp"

#include "http_client.hpp"
#include "kba/error.hpp"
#include "kba/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <regex>
#include <thread>

namespace kba {

using nlohmann::json;

std::string_view to_string(ThreadState s) noexcept {
    switch (s) {
    case ThreadState::incoming: return "incoming";
    case ThreadState::drafted: return "drafted";
    case ThreadState::revising: return "revising";
    case ThreadState::sent: return "sent";
    case ThreadState::discarded: return "discarded";
    }
    return "incoming";
}

std::string_view to_string(Author a) noexcept {
    switch (a) {
    case Author::user: return "user";
    case Author::developer: return "developer";
    case Author::assistant: return "assistant";
    }
    return "user";
}

std::string_view to_string(ReviewAction a) noexcept {
    switch (a) {
    case ReviewAction::send: return "send";
    case ReviewAction::discard: return "discard";
    case ReviewAction::revise: return "revise";
    }
    return "send";
}

ThreadState thread_state_from_string(std::string_view s) {
    for (auto v : {ThreadState::incoming, ThreadState::drafted, ThreadState::revising, ThreadState::sent,
                   ThreadState::discarded}) {
        if (to_string(v) == s) return v;
    }
    throw Error(Errc::invalid_argument, "unknown thread state '" + std::string(s) + "'");
}

Author author_from_string(std::string_view s) {
    for (auto v : {Author::user, Author::developer, Author::assistant}) {
        if (to_string(v) == s) return v;
    }
    throw Error(Errc::invalid_argument, "unknown author '" + std::string(s) + "'");
}

ReviewAction review_action_from_string(std::string_view s) {
    for (auto v : {ReviewAction::send, ReviewAction::discard, ReviewAction::revise}) {
        if (to_string(v) == s) return v;
    }
    throw Error(Errc::invalid_argument, "unknown action '" + std::string(s) + "' (expected send, discard or revise)");
}

json to_json(const ReviewThread& t) {
    json messages = json::array();
    for (const auto& m : t.messages) {
        json atts = json::array();
        for (const auto& a : m.attachments) {
            atts.push_back({{"name", a.name}, {"content_type", a.content_type}, {"text", a.text}});
        }
        messages.push_back({{"message_id", m.message_id},
                            {"author", to_string(m.author)},
                            {"from", m.from},
                            {"body", m.body},
                            {"attachments", atts},
                            {"timestamp", m.timestamp}});
    }
    json j{{"thread_id", t.thread_id},
           {"subject", t.subject},
           {"thread_token", t.thread_token},
           {"reply_to", t.reply_to},
           {"messages", messages},
           {"state", to_string(t.state)},
           {"draft", nullptr},
           {"record_ids", t.record_ids},
           {"outcome", nullptr},
           {"unvetted", t.unvetted},
           {"created_at", t.created_at},
           {"updated_at", t.updated_at}};
    if (!t.continues.empty()) j["continues"] = t.continues;
    if (t.draft) {
        json ctx = json::array();
        for (const auto& r : t.draft->context) {
            ctx.push_back({{"chunk_id", r.chunk_id}, {"link", r.link}, {"score", r.score}, {"origin", r.origin},
                           {"pinned", r.pinned}});
        }
        j["draft"] = {{"text", t.draft->text},
                      {"record_id", t.draft->record_id},
                      {"context", ctx},
                      {"created_at", t.draft->created_at}};
    }
    if (t.outcome) j["outcome"] = {{"signer", t.outcome->signer}, {"sent_at", t.outcome->sent_at}};
    return j;
}

// ---- text cleanup ----

std::string normalize_subject(std::string_view subject) {
    std::string s = trim(subject);
    static const std::regex prefix(R"(^(re|fw|fwd|aw)\s*(\[\d+\])?\s*:\s*)", std::regex::icase);
    std::smatch m;
    while (std::regex_search(s, m, prefix)) s = trim(m.suffix().str());
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

std::string strip_quoted_reply(std::string_view body) {
    auto lines = split(body, '\n');
    for (auto& l : lines) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
    }
    static const std::regex wrote_line(R"(^\s*On\s.+wrote:\s*$)");
    static const std::regex original(R"(^\s*-{3,}\s*Original Message\s*-{3,}\s*$)", std::regex::icase);
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& l = lines[i];
        if (std::regex_match(l, original) || std::regex_match(l, wrote_line)) break;
        // Mail clients wrap long attributions over two lines.
        if (i + 1 < lines.size() && starts_with_ci(trim(l), "On ") && std::regex_match(l + " " + lines[i + 1], wrote_line)) {
            break;
        }
        const auto t = trim(l);
        if (!t.empty() && t.front() == '>') continue;
        kept.push_back(l);
    }
    while (!kept.empty() && trim(kept.back()).empty()) kept.pop_back();
    while (!kept.empty() && trim(kept.front()).empty()) kept.erase(kept.begin());
    return join(kept, "\n");
}

namespace {

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string percent_decode(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size() && hex_value(s[i + 1]) >= 0 &&
            hex_value(s[i + 2]) >= 0) {
            out.push_back(static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2])));
            i += 2;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

std::string decode_v2(std::string u) {
    for (auto& c : u) {
        if (c == '-') {
            c = '%';
        } else if (c == '_') {
            c = '/';
        }
    }
    return percent_decode(u);
}

// v3 replaces characters with '*' and ships them base64-encoded after ';'.
// '**' followed by one alphabet letter stands for a run of 2.. characters.
std::string decode_v3(const std::string& url, const std::string& encoded) {
    static constexpr std::string_view run_alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
    std::string bytes;
    try {
        bytes = base64_decode(encoded);
    } catch (const Error&) {
        return url;
    }
    const auto bounds = utf8_boundaries(bytes);
    std::size_t cp = 0;
    auto take = [&](std::size_t n) {
        std::string out;
        for (std::size_t k = 0; k < n && cp + 1 < bounds.size(); ++k, ++cp) {
            out.append(bytes, bounds[cp], bounds[cp + 1] - bounds[cp]);
        }
        return out;
    };
    const std::string decoded_url = percent_decode(url);
    std::string out;
    for (std::size_t i = 0; i < decoded_url.size(); ++i) {
        if (decoded_url[i] != '*') {
            out.push_back(decoded_url[i]);
            continue;
        }
        if (i + 2 < decoded_url.size() && decoded_url[i + 1] == '*') {
            auto pos = run_alphabet.find(decoded_url[i + 2]);
            if (pos != std::string_view::npos) {
                out += take(pos + 2);
                i += 2;
                continue;
            }
        }
        out += take(1);
    }
    return out;
}

template <class F>
std::string regex_replace_fn(const std::string& text, const std::regex& re, F fn) {
    std::string out;
    auto begin = std::sregex_iterator(text.begin(), text.end(), re);
    std::size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        out.append(text, last, static_cast<std::size_t>(it->position()) - last);
        out += fn(*it);
        last = static_cast<std::size_t>(it->position() + it->length());
    }
    out.append(text, last, std::string::npos);
    return out;
}

} // namespace

std::string revert_protected_urls(std::string_view input) {
    static const std::regex v3(
        R"(https?://urldefense(?:\.proofpoint)?\.com/v3/__(.+?)__;([A-Za-z0-9_\-]*)!(?:[^\s$]*\$)?)");
    static const std::regex v2(R"(https?://urldefense\.proofpoint\.com/v2/url\?u=([^&\s]+)(?:&(?:amp;)?[a-z]=[^&\s]*)*)");
    static const std::regex v1(R"(https?://urldefense\.proofpoint\.com/v1/url\?u=([^&\s]+)(?:&(?:amp;)?[a-z]=[^&\s]*)*)");
    std::string text(input);
    if (text.find("urldefense") == std::string::npos) return text;
    text = regex_replace_fn(text, v3, [](const std::smatch& m) { return decode_v3(m[1].str(), m[2].str()); });
    text = regex_replace_fn(text, v2, [](const std::smatch& m) { return decode_v2(m[1].str()); });
    text = regex_replace_fn(text, v1, [](const std::smatch& m) { return percent_decode(m[1].str()); });
    return text;
}

std::string email_address(std::string_view from) {
    auto open = from.rfind('<');
    auto close = from.rfind('>');
    if (open != std::string_view::npos && close != std::string_view::npos && close > open) {
        return to_lower_ascii(trim(from.substr(open + 1, close - open - 1)));
    }
    return to_lower_ascii(trim(from));
}

// ---- email parsing ----

namespace {

using HeaderMap = std::vector<std::pair<std::string, std::string>>;

std::string header(const HeaderMap& h, std::string_view name) {
    for (const auto& [k, v] : h) {
        if (to_lower_ascii(k) == to_lower_ascii(name)) return v;
    }
    return {};
}

std::pair<HeaderMap, std::string> split_headers(std::string_view raw) {
    HeaderMap headers;
    std::size_t pos = 0;
    while (pos < raw.size()) {
        auto eol = raw.find('\n', pos);
        if (eol == std::string_view::npos) eol = raw.size();
        std::string line(raw.substr(pos, eol - pos));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = eol + 1;
        if (line.empty()) break;
        if ((line[0] == ' ' || line[0] == '\t') && !headers.empty()) {
            headers.back().second += " " + trim(line);
            continue;
        }
        auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        headers.emplace_back(trim(line.substr(0, colon)), trim(line.substr(colon + 1)));
    }
    return {headers, pos < raw.size() ? std::string(raw.substr(pos)) : std::string()};
}

std::string param(const std::string& value, std::string_view name) {
    const auto lower = to_lower_ascii(value);
    auto pos = lower.find(std::string(name) + "=");
    if (pos == std::string::npos) return {};
    pos += name.size() + 1;
    if (pos < value.size() && value[pos] == '"') {
        auto end = value.find('"', pos + 1);
        return value.substr(pos + 1, end == std::string::npos ? std::string::npos : end - pos - 1);
    }
    auto end = value.find_first_of("; \t", pos);
    return value.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

std::string decode_quoted_printable(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '=') {
            out.push_back(s[i]);
            continue;
        }
        if (i + 1 < s.size() && s[i + 1] == '\n') {
            i += 1;
        } else if (i + 2 < s.size() && s[i + 1] == '\r' && s[i + 2] == '\n') {
            i += 2;
        } else if (i + 2 < s.size() && hex_value(s[i + 1]) >= 0 && hex_value(s[i + 2]) >= 0) {
            out.push_back(static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2])));
            i += 2;
        } else {
            out.push_back('=');
        }
    }
    return out;
}

std::string decode_body(const HeaderMap& h, const std::string& body) {
    const auto enc = to_lower_ascii(header(h, "Content-Transfer-Encoding"));
    if (enc == "base64") return base64_decode(body);
    if (enc == "quoted-printable") return decode_quoted_printable(body);
    return body;
}

std::string strip_angle(std::string s) {
    s = trim(s);
    if (s.size() >= 2 && s.front() == '<' && s.back() == '>') s = s.substr(1, s.size() - 2);
    return s;
}

} // namespace

InboundMessage parse_email(std::string_view raw) {
    auto [headers, body] = split_headers(raw);
    InboundMessage m;
    m.message_id = strip_angle(header(headers, "Message-ID"));
    m.from = header(headers, "From");
    m.subject = header(headers, "Subject");
    m.in_reply_to = strip_angle(header(headers, "In-Reply-To"));
    m.thread_token = header(headers, "X-KBA-Thread");
    m.timestamp = header(headers, "Date");
    if (m.in_reply_to.empty()) {
        auto refs = split(trim(header(headers, "References")), ' ');
        if (!refs.empty() && !refs.back().empty()) m.in_reply_to = strip_angle(refs.back());
    }

    const auto ctype = header(headers, "Content-Type");
    if (!starts_with_ci(ctype, "multipart/")) {
        m.body = decode_body(headers, body);
        return m;
    }
    const auto boundary = param(ctype, "boundary");
    if (boundary.empty()) throw Error(Errc::format_error, "multipart message without boundary");
    const std::string delim = "--" + boundary;
    std::size_t pos = body.find(delim);
    bool have_body = false;
    while (pos != std::string::npos) {
        pos += delim.size();
        if (body.compare(pos, 2, "--") == 0) break;
        auto next = body.find(delim, pos);
        std::string part = body.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        auto nl = part.find('\n');
        part = nl == std::string::npos ? std::string() : part.substr(nl + 1);
        auto [ph, pbody] = split_headers(part);
        while (!pbody.empty() && (pbody.back() == '\n' || pbody.back() == '\r')) pbody.pop_back();
        const auto ptype = header(ph, "Content-Type");
        const auto disp = header(ph, "Content-Disposition");
        const bool is_text = ptype.empty() || starts_with_ci(ptype, "text/");
        if (!have_body && is_text && !starts_with_ci(disp, "attachment")) {
            m.body = decode_body(ph, pbody);
            have_body = true;
        } else {
            Attachment a;
            a.name = param(disp, "filename");
            if (a.name.empty()) a.name = param(ptype, "name");
            a.content_type = ptype.empty() ? "text/plain" : trim(ptype.substr(0, ptype.find(';')));
            if (is_text) a.text = decode_body(ph, pbody);
            m.attachments.push_back(std::move(a));
        }
        pos = next;
    }
    return m;
}

// ---- adapters ----

std::vector<InboundMessage> FakeAdapter::poll() {
    std::lock_guard lock(mu_);
    ++poll_calls_;
    if (failing_polls_ > 0) {
        --failing_polls_;
        throw Error(Errc::adapter_error, "fake adapter: simulated poll failure");
    }
    if (redeliver_) return all_;
    std::vector<InboundMessage> out(all_.begin() + static_cast<std::ptrdiff_t>(cursor_), all_.end());
    cursor_ = all_.size();
    return out;
}

void FakeAdapter::deliver(const ReviewThread& thread, const std::string& text, const std::string& signer) {
    std::lock_guard lock(mu_);
    if (failing_deliveries_) throw Error(Errc::adapter_error, "fake adapter: simulated delivery failure");
    deliveries_.push_back({thread.thread_id, text, signer});
}

void FakeAdapter::notify(const std::string& channel, const json& event) {
    std::lock_guard lock(mu_);
    notifications_.push_back({{"channel", channel}, {"event", event}});
}

void FakeAdapter::push(InboundMessage m) {
    std::lock_guard lock(mu_);
    all_.push_back(std::move(m));
}

std::vector<FakeAdapter::Delivery> FakeAdapter::deliveries() const {
    std::lock_guard lock(mu_);
    return deliveries_;
}

std::vector<json> FakeAdapter::notifications() const {
    std::lock_guard lock(mu_);
    return notifications_;
}

int FakeAdapter::poll_calls() const {
    std::lock_guard lock(mu_);
    return poll_calls_;
}

MaildirAdapter::MaildirAdapter(std::filesystem::path root, std::string bot_address)
    : root_(std::move(root)), bot_address_(std::move(bot_address)) {
    for (const char* sub : {"new", "cur", "outbox"}) std::filesystem::create_directories(root_ / sub);
}

std::vector<InboundMessage> MaildirAdapter::poll() {
    std::lock_guard lock(mu_);
    std::vector<std::filesystem::path> files;
    std::error_code ec;
    for (const auto& e : std::filesystem::directory_iterator(root_ / "new", ec)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    if (ec) throw Error(Errc::adapter_error, "cannot list " + (root_ / "new").string() + ": " + ec.message());
    std::sort(files.begin(), files.end());
    std::vector<InboundMessage> out;
    for (const auto& f : files) {
        try {
            auto m = parse_email(read_text_file(f));
            if (m.message_id.empty()) m.message_id = "maildir-" + f.filename().string();
            out.push_back(std::move(m));
        } catch (const Error& e) {
            spdlog::warn("maildir: skipping unparsable message {}: {}", f.filename().string(), e.what());
        }
        std::filesystem::rename(f, root_ / "cur" / (f.filename().string() + ":2,S"), ec);
        if (ec) throw Error(Errc::adapter_error, "cannot move " + f.string() + ": " + ec.message());
    }
    return out;
}

void MaildirAdapter::deliver(const ReviewThread& thread, const std::string& text, const std::string& signer) {
    std::lock_guard lock(mu_);
    std::string last_id;
    for (const auto& m : thread.messages) {
        if (m.author == Author::user && !m.message_id.empty()) last_id = m.message_id;
    }
    std::string eml;
    eml += "From: " + bot_address_ + "\r\n";
    eml += "To: " + thread.reply_to + "\r\n";
    eml += "Subject: Re: " + thread.subject + "\r\n";
    eml += "Date: " + now_iso8601() + "\r\n";
    if (!last_id.empty()) eml += "In-Reply-To: <" + last_id + ">\r\n";
    if (!thread.thread_token.empty()) eml += "X-KBA-Thread: " + thread.thread_token + "\r\n";
    eml += "X-KBA-Signer: " + signer + "\r\n";
    eml += "Content-Type: text/plain; charset=utf-8\r\n\r\n";
    eml += text + "\r\n";
    const auto stamp = std::to_string(std::chrono::duration_cast<std::chrono::microseconds>(
                                          std::chrono::system_clock::now().time_since_epoch())
                                          .count());
    try {
        write_file_atomic(root_ / "outbox" / (stamp + "-" + thread.thread_id + ".eml"), eml);
    } catch (const Error& e) {
        throw Error(Errc::adapter_error, std::string("maildir delivery failed: ") + e.what());
    }
}

void MaildirAdapter::notify(const std::string& channel, const json& event) {
    std::lock_guard lock(mu_);
    std::ofstream out(root_ / "notifications.jsonl", std::ios::app);
    if (!out) throw Error(Errc::adapter_error, "cannot write maildir notifications");
    out << json{{"channel", channel}, {"event", event}}.dump() << '\n';
}

WebhookAdapter::WebhookAdapter(std::string base_url, std::string bearer_env)
    : base_url_(std::move(base_url)), bearer_env_(std::move(bearer_env)) {}

void WebhookAdapter::deliver(const ReviewThread& thread, const std::string& text, const std::string& signer) {
    detail::HttpRequestOptions opts;
    opts.bearer_env = bearer_env_;
    opts.max_attempts = 3;
    try {
        detail::post_json(base_url_, "/deliver",
                          {{"thread_id", thread.thread_id},
                           {"subject", thread.subject},
                           {"reply_to", thread.reply_to},
                           {"thread_token", thread.thread_token},
                           {"text", text},
                           {"signer", signer}},
                          opts);
    } catch (const Error& e) {
        throw Error(Errc::adapter_error, std::string("webhook delivery failed: ") + e.what());
    }
}

void WebhookAdapter::notify(const std::string& channel, const json& event) {
    detail::HttpRequestOptions opts;
    opts.bearer_env = bearer_env_;
    try {
        detail::post_json(base_url_, "/notify", {{"channel", channel}, {"event", event}}, opts);
    } catch (const Error& e) {
        throw Error(Errc::adapter_error, std::string("webhook notify failed: ") + e.what());
    }
}

// ---- events ----

std::uint64_t EventBus::publish(std::string type, std::string thread_id, json data) {
    std::uint64_t seq;
    {
        std::lock_guard lock(mu_);
        seq = next_++;
        events_.push_back({seq, std::move(type), std::move(thread_id), std::move(data)});
        while (events_.size() > capacity_) events_.pop_front();
    }
    cv_.notify_all();
    return seq;
}

std::vector<GatewayEvent> EventBus::since(std::uint64_t after, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || (!events_.empty() && events_.back().seq > after); });
    std::vector<GatewayEvent> out;
    for (const auto& e : events_) {
        if (e.seq > after) out.push_back(e);
    }
    return out;
}

std::uint64_t EventBus::last_seq() const {
    std::lock_guard lock(mu_);
    return next_ - 1;
}

void EventBus::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

// ---- gateway ----

namespace {

Error illegal(const ReviewThread& t, std::string_view what) {
    return Error(Errc::illegal_transition, "thread " + t.thread_id + " is " + std::string(to_string(t.state)) +
                                               (t.unvetted ? " (direct chat)" : "") + ": cannot " +
                                               std::string(what));
}

std::string thread_key(const std::string& subject, const std::string& token) {
    return normalize_subject(to_lower_ascii(subject)) + '\x1f' + token;
}

} // namespace

Gateway::Gateway(TransportAdapter& adapter, DraftFunction draft_fn, GatewayOptions options)
    : adapter_(adapter), draft_fn_(std::move(draft_fn)), options_(std::move(options)) {
    if (!draft_fn_) throw Error(Errc::invalid_argument, "gateway needs a draft function");
    options_.bot_address = email_address(options_.bot_address);
}

ReviewThread& Gateway::at(const std::string& thread_id) {
    auto it = threads_.find(thread_id);
    if (it == threads_.end()) throw Error(Errc::not_found, "no thread " + thread_id);
    return it->second;
}

void Gateway::publish(const std::string& type, const ReviewThread& t) {
    events_.publish(type, t.thread_id, {{"state", to_string(t.state)}, {"subject", t.subject}});
}

std::string Gateway::file_message(InboundMessage in) {
    const auto sender = email_address(in.from);
    if (!options_.bot_address.empty() && sender == options_.bot_address) return {};
    if (in.message_id.empty()) {
        in.message_id = "gen-" + sha256_hex(in.from + "\n" + in.subject + "\n" + in.body + "\n" + in.timestamp).substr(0, 16);
    }
    if (seen_messages_.count(in.message_id)) return {};

    ThreadMessage msg;
    msg.message_id = in.message_id;
    msg.author = Author::user;
    msg.from = in.from;
    msg.body = strip_quoted_reply(revert_protected_urls(in.body));
    msg.timestamp = in.timestamp.empty() ? now_iso8601() : in.timestamp;
    for (auto a : in.attachments) {
        a.text = revert_protected_urls(a.text);
        msg.attachments.push_back(std::move(a));
    }

    const auto key = thread_key(in.subject, in.thread_token);
    std::string id;
    if (auto it = message_to_thread_.find(in.in_reply_to); !in.in_reply_to.empty() && it != message_to_thread_.end()) {
        id = it->second;
        // Follow to the newest round of that conversation.
        const auto& t = threads_.at(id);
        if (auto k = key_to_thread_.find(thread_key(t.subject, t.thread_token)); k != key_to_thread_.end()) id = k->second;
    } else if (auto k = key_to_thread_.find(key); k != key_to_thread_.end()) {
        id = k->second;
    }

    std::string event = "thread.updated";
    if (!id.empty() && is_terminal(threads_.at(id).state)) {
        // A reply after send/discard starts a new round carrying the history.
        const auto& prev = threads_.at(id);
        auto base = prev.continues.empty() ? prev.thread_id : prev.thread_id.substr(0, prev.thread_id.rfind('-'));
        int round = 2;
        while (threads_.count(base + "-" + std::to_string(round))) ++round;
        ReviewThread next;
        next.thread_id = base + "-" + std::to_string(round);
        next.subject = prev.subject;
        next.thread_token = prev.thread_token;
        next.reply_to = prev.reply_to;
        next.messages = prev.messages;
        next.continues = prev.thread_id;
        next.created_at = now_iso8601();
        key_to_thread_[thread_key(prev.subject, prev.thread_token)] = next.thread_id;
        id = next.thread_id;
        order_.push_back(id);
        threads_.emplace(id, std::move(next));
        event = "thread.created";
    } else if (id.empty()) {
        ReviewThread t;
        t.thread_id = "th-" + sha256_hex(key).substr(0, 12);
        t.subject = normalize_subject(in.subject);
        if (t.subject.empty()) t.subject = "(no subject)";
        t.thread_token = in.thread_token;
        t.reply_to = in.from;
        t.created_at = now_iso8601();
        id = t.thread_id;
        key_to_thread_[key] = id;
        order_.push_back(id);
        threads_.emplace(id, std::move(t));
        event = "thread.created";
    }

    auto& t = threads_.at(id);
    t.messages.push_back(std::move(msg));
    t.updated_at = now_iso8601();
    seen_messages_.insert(in.message_id);
    message_to_thread_[in.message_id] = id;
    publish(event, t);
    return event == "thread.created" ? "+" + id : id;
}

std::string Gateway::receive(InboundMessage message) {
    std::string r;
    {
        std::lock_guard lock(mu_);
        r = file_message(std::move(message));
    }
    if (!r.empty() && r.front() == '+') {
        r.erase(0, 1);
        try {
            adapter_.notify(options_.review_channel, {{"type", "thread.created"}, {"thread_id", r}});
        } catch (const std::exception& e) {
            spdlog::warn("reviewer notification failed: {}", e.what());
        }
    }
    return r;
}

std::vector<std::string> Gateway::ingest() {
    std::vector<InboundMessage> batch;
    bool ok = false;
    auto wait = options_.poll_backoff;
    for (int attempt = 1; attempt <= std::max(1, options_.poll_attempts); ++attempt) {
        try {
            batch = adapter_.poll();
            ok = true;
            break;
        } catch (const std::exception& e) {
            last_ingest_error_ = e.what();
            spdlog::warn("{} poll attempt {} failed: {}", adapter_.name(), attempt, e.what());
            if (attempt < options_.poll_attempts) {
                std::this_thread::sleep_for(wait);
                wait *= 2;
            }
        }
    }
    if (!ok) {
        events_.publish("ingest.failed", "", {{"error", last_ingest_error_}});
        return {};
    }
    last_ingest_error_.clear();
    std::vector<std::string> touched;
    for (auto& m : batch) {
        auto id = receive(std::move(m));
        if (!id.empty() && std::find(touched.begin(), touched.end(), id) == touched.end()) touched.push_back(id);
    }
    return touched;
}

std::string Gateway::conversation_query(const ReviewThread& t) {
    std::string q = "Subject: " + t.subject + "\n";
    for (const auto& m : t.messages) {
        q += "\n[" + std::string(to_string(m.author)) + (m.from.empty() ? "" : " " + m.from) + "]\n" + m.body + "\n";
        for (const auto& a : m.attachments) {
            if (a.text.empty()) continue;
            q += "\nAttachment " + a.name + ":\n" + a.text + "\n";
        }
    }
    if (t.state == ThreadState::revising && t.draft) {
        q += "\n[previous draft, revise it following the developer's guidance]\n" + t.draft->text + "\n";
    }
    return q;
}

ReviewThread Gateway::draft(const std::string& thread_id) {
    ReviewThread snapshot;
    {
        std::lock_guard lock(mu_);
        auto& t = at(thread_id);
        if (t.unvetted) throw illegal(t, "draft");
        if (busy_.count(thread_id)) throw illegal(t, "draft while another operation is in progress");
        if (t.state != ThreadState::incoming && t.state != ThreadState::revising) throw illegal(t, "draft");
        busy_.insert(thread_id);
        snapshot = t;
    }
    DraftResult result;
    try {
        result = draft_fn_(snapshot, conversation_query(snapshot));
    } catch (const std::exception& e) {
        {
            std::lock_guard lock(mu_);
            busy_.erase(thread_id);
        }
        events_.publish("draft.failed", thread_id, {{"error", e.what()}});
        throw;
    }
    ReviewThread out;
    {
        std::lock_guard lock(mu_);
        auto& t = at(thread_id);
        busy_.erase(thread_id);
        t.draft = Draft{result.answer, result.record_id, result.context, now_iso8601()};
        if (!result.record_id.empty()) t.record_ids.push_back(result.record_id);
        t.state = ThreadState::drafted;
        t.updated_at = now_iso8601();
        publish("thread.drafted", t);
        out = t;
    }
    try {
        adapter_.notify(options_.review_channel, {{"type", "thread.drafted"}, {"thread_id", thread_id}});
    } catch (const std::exception& e) {
        spdlog::warn("reviewer notification failed: {}", e.what());
    }
    return out;
}

ReviewThread Gateway::act(const std::string& thread_id, ReviewAction action, const std::string& actor,
                          const std::string& guidance) {
    ReviewThread snapshot;
    std::string text;
    const auto signer = trim(actor);
    {
        std::lock_guard lock(mu_);
        auto& t = at(thread_id);
        if (t.unvetted || busy_.count(thread_id) || t.state != ThreadState::drafted) {
            throw illegal(t, std::string(to_string(action)));
        }
        switch (action) {
        case ReviewAction::discard:
            t.draft.reset();
            t.state = ThreadState::discarded;
            t.updated_at = now_iso8601();
            publish("thread.discarded", t);
            return t;
        case ReviewAction::revise:
            if (!trim(guidance).empty()) {
                t.messages.push_back({"", Author::developer, signer, guidance, {}, now_iso8601()});
            }
            t.state = ThreadState::revising;
            t.updated_at = now_iso8601();
            publish("thread.revising", t);
            return t;
        case ReviewAction::send:
            if (signer.empty()) throw Error(Errc::missing_signer, "send on thread " + thread_id + " needs a signer");
            busy_.insert(thread_id);
            snapshot = t;
            text = t.draft->text + "\n\n-- " + signer;
            break;
        }
    }
    try {
        adapter_.deliver(snapshot, text, signer);
    } catch (const std::exception& e) {
        {
            std::lock_guard lock(mu_);
            busy_.erase(thread_id);
        }
        events_.publish("delivery.failed", thread_id, {{"error", e.what()}});
        if (const auto* err = dynamic_cast<const Error*>(&e); err && err->code() == Errc::adapter_error) throw;
        throw Error(Errc::adapter_error, std::string("delivery failed: ") + e.what());
    }
    std::lock_guard lock(mu_);
    auto& t = at(thread_id);
    busy_.erase(thread_id);
    const auto now = now_iso8601();
    t.messages.push_back({"", Author::assistant, signer, text, {}, now});
    t.outcome = SendOutcome{signer, now};
    t.state = ThreadState::sent;
    t.updated_at = now;
    publish("thread.sent", t);
    return t;
}

ReviewThread Gateway::ask_direct(const std::string& question, const std::string& asker, const std::string& thread_id) {
    if (trim(question).empty()) throw Error(Errc::empty_input, "question is empty");
    ReviewThread snapshot;
    std::string id = thread_id;
    {
        std::lock_guard lock(mu_);
        if (id.empty()) {
            ReviewThread t;
            const auto now = now_iso8601();
            t.thread_id = "dm-" + sha256_hex(asker + "\n" + question + "\n" + now + std::to_string(threads_.size())).substr(0, 12);
            auto first_line = trim(question.substr(0, question.find('\n')));
            if (utf8_length(first_line) > 80) first_line = first_line.substr(0, utf8_boundaries(first_line)[80]);
            t.subject = first_line;
            t.reply_to = asker;
            t.unvetted = true;
            t.created_at = now;
            id = t.thread_id;
            order_.push_back(id);
            threads_.emplace(id, std::move(t));
        }
        auto& t = at(id);
        if (!t.unvetted) throw illegal(t, "ask directly on a reviewed thread");
        if (busy_.count(id)) throw illegal(t, "ask while another answer is in progress");
        t.messages.push_back({"", Author::user, asker, question, {}, now_iso8601()});
        busy_.insert(id);
        snapshot = t;
    }
    DraftResult result;
    try {
        result = draft_fn_(snapshot, conversation_query(snapshot));
    } catch (const std::exception& e) {
        {
            std::lock_guard lock(mu_);
            busy_.erase(id);
        }
        events_.publish("draft.failed", id, {{"error", e.what()}});
        throw;
    }
    std::lock_guard lock(mu_);
    auto& t = at(id);
    busy_.erase(id);
    const auto answer = options_.unvetted_watermark + "\n\n" + result.answer;
    const auto now = now_iso8601();
    t.messages.push_back({"", Author::assistant, "", answer, {}, now});
    t.draft = Draft{answer, result.record_id, result.context, now};
    if (!result.record_id.empty()) t.record_ids.push_back(result.record_id);
    t.updated_at = now;
    publish("thread.answered", t);
    return t;
}

std::vector<ReviewThread> Gateway::threads() const {
    std::lock_guard lock(mu_);
    std::vector<ReviewThread> out;
    out.reserve(order_.size());
    for (const auto& id : order_) out.push_back(threads_.at(id));
    return out;
}

std::optional<ReviewThread> Gateway::thread(const std::string& thread_id) const {
    std::lock_guard lock(mu_);
    auto it = threads_.find(thread_id);
    if (it == threads_.end()) return std::nullopt;
    return it->second;
}

} // namespace kba
