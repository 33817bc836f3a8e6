#include "kba/server.hpp"

#include "kba/error.hpp"
#include "kba/util.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <condition_variable>
#include <thread>

namespace kba {

using nlohmann::json;

std::unique_ptr<TransportAdapter> make_adapter(const GatewayConfig& config) {
    if (config.adapter == "maildir") return std::make_unique<MaildirAdapter>(config.maildir, config.bot_address);
    if (config.adapter == "webhook") return std::make_unique<WebhookAdapter>(config.webhook_url, config.bearer_env);
    return std::make_unique<FakeAdapter>();
}

namespace {

int http_status(Errc code) {
    switch (code) {
    case Errc::not_found: return 404;
    case Errc::illegal_transition:
    case Errc::duplicate_record: return 409;
    case Errc::invalid_argument:
    case Errc::empty_input:
    case Errc::validation_error:
    case Errc::query_too_long:
    case Errc::format_error: return 400;
    case Errc::missing_signer:
    case Errc::incomplete_matrix:
    case Errc::incomplete_scores:
    case Errc::empty_selection: return 422;
    case Errc::provider_error:
    case Errc::provider_timeout:
    case Errc::provider_contract_violation:
    case Errc::adapter_error: return 502;
    default: return 500;
    }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    if (trim(req.body).empty()) return json::object();
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) throw Error(Errc::invalid_argument, "request body must be a JSON object");
        return j;
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("malformed JSON body: ") + e.what());
    }
}

template <class T>
T field(const json& j, const char* key) {
    if (!j.contains(key)) throw Error(Errc::invalid_argument, std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(Errc::invalid_argument, std::string("field '") + key + "' has the wrong type");
    }
}

json record_summary(const InteractionRecord& r) {
    auto j = to_json(r);
    j.erase("rendered_prompt");
    return j;
}

} // namespace

struct Server::Impl {
    Engine& engine;
    Gateway& gateway;
    ServerOptions options;
    httplib::Server http;
    std::thread listener;
    std::thread poller;
    std::atomic<bool> stopping{false};
    std::mutex stop_mu;
    std::condition_variable stop_cv;
    int bound_port = 0;

    std::mutex sessions_mu;
    std::map<std::string, ScoringSession> sessions;

    Impl(Engine& e, Gateway& g, ServerOptions o) : engine(e), gateway(g), options(std::move(o)) { routes(); }

    void routes();
    void poll_loop();
};

void Server::Impl::routes() {
    http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type, Last-Event-ID"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    http.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    http.set_exception_handler([](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send_json(res, {{"error", errc_name(e.code())}, {"message", e.what()}}, http_status(e.code()));
        } catch (const std::exception& e) {
            spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
            send_json(res, {{"error", "internal"}, {"message", e.what()}}, 500);
        }
    });
    http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty() && res.status == 404) {
            send_json(res, {{"error", "not-found"}, {"message", "no route for " + req.method + " " + req.path}}, 404);
        }
    });

    http.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
        send_json(res, {{"status", "ok"}});
    });

    http.Get("/v1/rubric", [](const httplib::Request&, httplib::Response& res) {
        json r = json::array();
        for (std::size_t v = 0; v < kRubricLabels.size(); ++v) r.push_back({{"value", v}, {"label", kRubricLabels[v]}});
        send_json(res, {{"rubric", r}});
    });

    http.Get("/v1/threads", [this](const httplib::Request& req, httplib::Response& res) {
        json out = json::array();
        const auto state = req.get_param_value("state");
        for (const auto& t : gateway.threads()) {
            if (!state.empty() && to_string(t.state) != state) continue;
            out.push_back(to_json(t));
        }
        send_json(res, {{"threads", out}});
    });

    http.Get("/v1/threads/:id", [this](const httplib::Request& req, httplib::Response& res) {
        auto t = gateway.thread(req.path_params.at("id"));
        if (!t) throw Error(Errc::not_found, "no thread " + req.path_params.at("id"));
        send_json(res, to_json(*t));
    });

    http.Post("/v1/threads/:id/draft", [this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, to_json(gateway.draft(req.path_params.at("id"))));
    });

    http.Post("/v1/threads/:id/action", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto action = review_action_from_string(field<std::string>(body, "action"));
        const auto actor = body.value("actor", "");
        const auto guidance = body.value("guidance", "");
        send_json(res, to_json(gateway.act(req.path_params.at("id"), action, actor, guidance)));
    });

    http.Post("/v1/ask", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        auto t = gateway.ask_direct(field<std::string>(body, "question"), body.value("asker", "anonymous"),
                                    body.value("thread_id", ""));
        const auto& answer = t.draft->text;
        send_json(res, {{"thread", to_json(t)},
                        {"answer", answer},
                        {"html", render_html(parse_answer(answer))},
                        {"record_id", t.draft->record_id},
                        {"unvetted", true}});
    });

    http.Post("/v1/ingest", [this](const httplib::Request&, httplib::Response& res) {
        send_json(res, {{"threads", gateway.ingest()}, {"error", gateway.last_ingest_error()}});
    });

    // Hands one message to the gateway directly, for transports that push.
    http.Post("/v1/inbound", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        InboundMessage m;
        m.message_id = body.value("message_id", "");
        m.from = field<std::string>(body, "from");
        m.subject = body.value("subject", "");
        m.body = field<std::string>(body, "body");
        m.thread_token = body.value("thread_token", "");
        m.in_reply_to = body.value("in_reply_to", "");
        m.timestamp = body.value("timestamp", "");
        for (const auto& a : body.value("attachments", json::array())) {
            m.attachments.push_back({a.value("name", ""), a.value("content_type", "text/plain"), a.value("text", "")});
        }
        auto id = gateway.receive(std::move(m));
        send_json(res, {{"thread_id", id.empty() ? json(nullptr) : json(id)}, {"accepted", !id.empty()}},
                  id.empty() ? 200 : 201);
    });

    http.Get("/v1/records", [this](const httplib::Request& req, httplib::Response& res) {
        RecordFilter f;
        if (req.has_param("label")) f.label = config_label_from_string(req.get_param_value("label"));
        f.question_id = req.get_param_value("question_id");
        f.thread_id = req.get_param_value("thread_id");
        f.text = req.get_param_value("q");
        f.include_superseded = req.get_param_value("include_superseded") == "true";
        json out = json::array();
        for (const auto& r : engine.history().query(f)) out.push_back(record_summary(r));
        send_json(res, {{"records", out}});
    });

    http.Get("/v1/records/:id", [this](const httplib::Request& req, httplib::Response& res) {
        auto r = engine.history().get(req.path_params.at("id"));
        if (!r) throw Error(Errc::not_found, "no record " + req.path_params.at("id"));
        send_json(res, to_json(*r));
    });

    http.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        auto qids = field<std::vector<std::string>>(body, "question_ids");
        std::vector<ConfigLabel> configs;
        for (const auto& c : field<std::vector<std::string>>(body, "configs")) configs.push_back(config_label_from_string(c));
        const auto seed = body.value("seed", std::uint64_t{0});
        auto s = blind_batch(engine.history(), qids, configs, seed);
        auto view = s.to_json();
        std::lock_guard lock(sessions_mu);
        sessions.insert_or_assign(s.id(), std::move(s));
        send_json(res, view, 201);
    });

    http.Get("/v1/sessions/:id", [this](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(sessions_mu);
        auto it = sessions.find(req.path_params.at("id"));
        if (it == sessions.end()) throw Error(Errc::not_found, "no session " + req.path_params.at("id"));
        auto view = it->second.to_json();
        view["scored"] = it->second.scored_count();
        send_json(res, view);
    });

    http.Post("/v1/scores", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto sid = field<std::string>(body, "session_id");
        std::vector<SpanAnnotation> spans;
        for (const auto& sp : body.value("spans", json::array())) {
            spans.push_back({sp.at("start").get<std::size_t>(), sp.at("end").get<std::size_t>(),
                             sp.value("correct", true), sp.value("note", "")});
        }
        const auto value = field<int>(body, "value");
        validate_rubric_value(value);
        std::lock_guard lock(sessions_mu);
        auto it = sessions.find(sid);
        if (it == sessions.end()) throw Error(Errc::not_found, "no session " + sid);
        auto s = it->second.submit(engine.history(), field<std::string>(body, "item_id"), value,
                                   field<std::string>(body, "scorer_id"), body.value("rationale", ""), std::move(spans));
        send_json(res,
                  {{"session_id", sid},
                   {"item_id", body.at("item_id")},
                   {"value", s.value},
                   {"blind", s.blind},
                   {"timestamp", s.timestamp},
                   {"scored", it->second.scored_count()},
                   {"total", it->second.items().size()}},
                  201);
    });

    http.Get("/v1/events", [this](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t after = gateway.events().last_seq();
        auto from = req.has_header("Last-Event-ID") ? req.get_header_value("Last-Event-ID") : req.get_param_value("after");
        if (!from.empty()) {
            try {
                after = std::stoull(from);
            } catch (...) {
                throw Error(Errc::invalid_argument, "bad event id '" + from + "'");
            }
        }
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this, after](std::size_t, httplib::DataSink& sink) mutable {
            auto quiet = std::chrono::milliseconds(0);
            const auto step = std::chrono::milliseconds(250);
            while (!stopping) {
                auto events = gateway.events().since(after, step);
                if (events.empty()) {
                    quiet += step;
                    if (quiet >= options.keepalive) {
                        quiet = {};
                        const std::string ka = ": keep-alive\n\n";
                        if (!sink.write(ka.data(), ka.size())) return false;
                    }
                    if (!sink.is_writable()) return false;
                    continue;
                }
                std::string chunk;
                for (const auto& e : events) {
                    json data = e.data;
                    data["thread_id"] = e.thread_id;
                    chunk += "id: " + std::to_string(e.seq) + "\nevent: " + e.type + "\ndata: " + data.dump() + "\n\n";
                    after = e.seq;
                }
                if (!sink.write(chunk.data(), chunk.size())) return false;
                return true;
            }
            sink.done();
            return true;
        });
    });
}

void Server::Impl::poll_loop() {
    while (true) {
        {
            std::unique_lock lock(stop_mu);
            if (stop_cv.wait_for(lock, options.poll_interval, [this] { return stopping.load(); })) return;
        }
        try {
            gateway.ingest();
        } catch (const std::exception& e) {
            spdlog::warn("background ingest failed: {}", e.what());
        }
    }
}

Server::Server(Engine& engine, Gateway& gateway, ServerOptions options)
    : impl_(std::make_unique<Impl>(engine, gateway, std::move(options))) {}

Server::~Server() { stop(); }

int Server::start() {
    auto& d = *impl_;
    if (d.listener.joinable()) return d.bound_port;
    d.stopping = false;
    if (d.options.port == 0) {
        d.bound_port = d.http.bind_to_any_port(d.options.bind);
    } else {
        d.bound_port = d.http.bind_to_port(d.options.bind, d.options.port) ? d.options.port : -1;
    }
    if (d.bound_port <= 0) {
        throw Error(Errc::io_error, "cannot bind " + d.options.bind + ":" + std::to_string(d.options.port));
    }
    d.listener = std::thread([&d] { d.http.listen_after_bind(); });
    d.http.wait_until_ready();
    if (d.options.poll_interval.count() > 0) d.poller = std::thread([&d] { d.poll_loop(); });
    spdlog::info("serving on http://{}:{}/v1", d.options.bind, d.bound_port);
    return d.bound_port;
}

void Server::stop() {
    auto& d = *impl_;
    {
        std::lock_guard lock(d.stop_mu);
        d.stopping = true;
    }
    d.stop_cv.notify_all();
    d.http.stop();
    if (d.listener.joinable()) d.listener.join();
    if (d.poller.joinable()) d.poller.join();
}

void Server::wait() {
    auto& d = *impl_;
    std::unique_lock lock(d.stop_mu);
    d.stop_cv.wait(lock, [&d] { return d.stopping.load(); });
}

int Server::port() const noexcept { return impl_->bound_port; }

Service::Service(Engine& engine, std::optional<ServerOptions> options) {
    const auto& cfg = engine.config();
    adapter_ = make_adapter(cfg.gateway);
    GatewayOptions gopts;
    gopts.bot_address = cfg.gateway.bot_address;
    gateway_ = std::make_unique<Gateway>(
        *adapter_, [&engine](const ReviewThread& t, const std::string& q) { return engine.draft(t, q); }, gopts);
    ServerOptions sopts;
    if (options) {
        sopts = *options;
    } else {
        sopts.bind = cfg.server.bind;
        sopts.port = cfg.server.port;
        sopts.poll_interval = std::chrono::milliseconds(static_cast<long>(cfg.gateway.poll_interval_seconds * 1000));
    }
    server_ = std::make_unique<Server>(engine, *gateway_, sopts);
}

Service::~Service() {
    server_.reset();
    gateway_.reset();
}

} // namespace kba
