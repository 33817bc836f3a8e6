// Exhaustive action-sequence checker for the review state machine.
#pragma once

#include "kba/error.hpp"
#include "kba/gateway.hpp"

#include <set>
#include <string>
#include <vector>

namespace kba::test {

enum class Step { draft, send_signed, send_unsigned, discard, revise, repoll, reply };
inline constexpr int kStepCount = 7;

inline const char* step_name(Step s) {
    static const char* names[] = {"draft", "send", "send-unsigned", "discard", "revise", "repoll", "reply"};
    return names[static_cast<int>(s)];
}

struct ModelResult {
    std::size_t sequences = 0;
    std::string violation; // empty when every sequence holds
};

namespace detail {

inline std::string describe(const std::vector<Step>& seq) {
    std::string s;
    for (auto st : seq) s += std::string(s.empty() ? "" : ",") + step_name(st);
    return s;
}

inline std::string run_sequence(const std::vector<Step>& seq) {
    FakeAdapter adapter;
    adapter.set_redeliver(true);
    GatewayOptions opts;
    opts.poll_attempts = 1;
    opts.poll_backoff = std::chrono::milliseconds(0);
    int drafts = 0;
    Gateway gw(adapter, [&](const ReviewThread&, const std::string&) {
        return DraftResult{"answer " + std::to_string(++drafts), "rec-" + std::to_string(drafts), {}};
    }, opts);

    int pushed = 0;
    auto push = [&] {
        InboundMessage m;
        m.message_id = "m" + std::to_string(++pushed);
        m.from = "user@example.org";
        m.subject = pushed == 1 ? "Solver question" : "Re: Solver question";
        m.body = "message " + std::to_string(pushed);
        if (pushed > 1) m.in_reply_to = "m" + std::to_string(pushed - 1);
        adapter.push(m);
    };
    push();
    gw.ingest();

    for (std::size_t i = 0; i < seq.size(); ++i) {
        const auto where = describe(seq) + " at step " + std::to_string(i + 1) + ": ";
        const auto before = gw.threads();
        const auto target = before.back();
        const auto deliveries_before = adapter.deliveries().size();
        bool threw = false;
        try {
            switch (seq[i]) {
            case Step::draft: gw.draft(target.thread_id); break;
            case Step::send_signed: gw.act(target.thread_id, ReviewAction::send, "Alice Dev"); break;
            case Step::send_unsigned: gw.act(target.thread_id, ReviewAction::send, "  "); break;
            case Step::discard: gw.act(target.thread_id, ReviewAction::discard, "Alice Dev"); break;
            case Step::revise: gw.act(target.thread_id, ReviewAction::revise, "Alice Dev", "be brief"); break;
            case Step::repoll: gw.ingest(); break;
            case Step::reply: push(); gw.ingest(); break;
            }
        } catch (const Error& e) {
            threw = true;
            if (e.code() != Errc::illegal_transition && e.code() != Errc::missing_signer) {
                return where + "unexpected error " + e.what();
            }
        }
        const auto after = gw.threads();
        const auto deliveries = adapter.deliveries();
        const auto* now = &after[before.size() - 1];

        const bool legal_send = seq[i] == Step::send_signed && target.state == ThreadState::drafted;
        if (deliveries.size() != deliveries_before + (legal_send ? 1 : 0)) return where + "unexpected delivery count";
        if (legal_send) {
            const auto& d = deliveries.back();
            if (d.signer != "Alice Dev" || d.thread_id != target.thread_id) return where + "delivery without signer";
            if (now->state != ThreadState::sent || !now->outcome || now->outcome->signer != "Alice Dev") {
                return where + "send did not record its signer";
            }
        }
        if (is_terminal(target.state) && now->state != target.state) return where + "terminal state left";
        if (threw && now->state != target.state) return where + "failed action changed state";
        if (seq[i] == Step::send_unsigned && !threw) return where + "unsigned send accepted";

        // Every pushed message is filed once, into the newest round.
        std::set<std::string> ids;
        std::size_t user_msgs = 0;
        for (const auto& m : after.back().messages) {
            if (m.author != Author::user) continue;
            ++user_msgs;
            if (!ids.insert(m.message_id).second) return where + "message filed twice";
        }
        if (user_msgs != static_cast<std::size_t>(pushed)) return where + "message lost or duplicated";
        for (const auto& t : after) {
            if (t.continues.empty() && &t != &after.front()) return where + "reply split the conversation";
        }
    }
    return {};
}

// Checks run after every step, so replaying each full-length sequence also
// covers all of its prefixes.
inline void enumerate(std::vector<Step>& seq, int max_len, ModelResult& r) {
    if (!r.violation.empty()) return;
    if (static_cast<int>(seq.size()) == max_len) {
        r.violation = run_sequence(seq);
        return;
    }
    for (int s = 0; s < kStepCount; ++s) {
        seq.push_back(static_cast<Step>(s));
        enumerate(seq, max_len, r);
        seq.pop_back();
    }
}

} // namespace detail

inline ModelResult check_gateway_model(int max_len) {
    ModelResult r;
    std::vector<Step> seq;
    detail::enumerate(seq, max_len, r);
    std::size_t level = 1;
    for (int len = 1; len <= max_len; ++len) r.sequences += level *= kStepCount;
    return r;
}

} // namespace kba::test
