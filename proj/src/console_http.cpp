#include <httplib.h>

#include <chrono>

#include <fmt/format.h>

#include "cref/console.hpp"
#include "cref/error.hpp"

namespace cref {

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kParse: return 400;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kWrongState: return 409;
    case ErrorCode::kProviderUnavailable: return 503;
    default: return 500;
  }
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, {{"code", code}, {"message", message}});
}

nlohmann::json body_of(const httplib::Request& req) {
  try {
    nlohmann::json j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("malformed JSON body: {}", e.what()));
  }
}

std::string string_field(const nlohmann::json& body, const char* key) {
  auto it = body.find(key);
  if (it == body.end() || !it->is_string()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("field '{}' must be a string", key));
  }
  return it->get<std::string>();
}

/// Runs a handler, mapping library errors to {code, message} bodies.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, status_for(e.code()), to_string(e.code()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

std::string sse_frame(const SessionEvent& e) {
  return fmt::format("id: {}\nevent: {}\ndata: {}\n\n", e.seq, e.kind, nlohmann::json(e).dump());
}

}  // namespace

struct ConsoleServer::Impl {
  explicit Impl(ConsoleService& s) : service(s) {}
  ConsoleService& service;
  httplib::Server server;
};

ConsoleServer::ConsoleServer(ConsoleService& service, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  httplib::Server& srv = impl_->server;
  ConsoleService* svc = &service;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/problems", guarded([svc](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, svc->problems());
          }));

  srv.Get("/sessions", guarded([svc](const httplib::Request&, httplib::Response& res) {
            nlohmann::json out = nlohmann::json::array();
            for (const LiveSession& s : svc->list()) {
              out.push_back({{"id", s.id},
                             {"problem_id", s.problem_id},
                             {"state", std::string(to_string(s.state))},
                             {"created_at", s.created_at},
                             {"updated_at", s.updated_at}});
            }
            send_json(res, 200, out);
          }));

  srv.Post("/sessions", guarded([svc](const httplib::Request& req, httplib::Response& res) {
             const nlohmann::json body = body_of(req);
             const LiveSession s = svc->create_session(string_field(body, "problem_id"),
                                                       string_field(body, "incorrect_code"));
             send_json(res, 201, svc->view(s.id));
           }));

  srv.Get(R"(/sessions/([^/]+))", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, svc->view(req.matches[1]));
          }));

  srv.Post(R"(/sessions/([^/]+)/guidance)",
           guarded([svc](const httplib::Request& req, httplib::Response& res) {
             const nlohmann::json body = body_of(req);
             svc->submit_guidance(req.matches[1], string_field(body, "guidance"));
             send_json(res, 202, {{"accepted", true}, {"state", svc->view(req.matches[1])["state"]}});
           }));

  srv.Post(R"(/sessions/([^/]+)/approve)",
           guarded([svc](const httplib::Request& req, httplib::Response& res) {
             const nlohmann::json body = body_of(req);
             svc->approve(req.matches[1], string_field(body, "reply"));
             send_json(res, 200, svc->view(req.matches[1]));
           }));

  srv.Get(R"(/sessions/([^/]+)/events)",
          guarded([svc](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            std::int64_t from = 1;
            if (req.has_param("from")) {
              try {
                from = std::stoll(req.get_param_value("from"));
              } catch (const std::exception&) {
                throw Error(ErrorCode::kInvalidArgument, "'from' must be an integer");
              }
            }
            svc->get(id);  // 404 before any streaming starts
            const bool stream = req.get_header_value("Accept").find("text/event-stream") !=
                                    std::string::npos ||
                                req.get_param_value("stream") == "1";
            if (!stream) {
              const auto events = svc->events_since(id, from);
              const std::int64_t next = events.empty() ? std::max<std::int64_t>(from, 1)
                                                       : events.back().seq + 1;
              send_json(res, 200, {{"events", events}, {"next", next}, {"finished", svc->finished(id)}});
              return;
            }
            res.set_header("Cache-Control", "no-cache");
            auto cursor = std::make_shared<std::int64_t>(std::max<std::int64_t>(from, 1));
            auto idle = std::make_shared<int>(0);
            res.set_chunked_content_provider(
                "text/event-stream", [svc, id, cursor, idle](std::size_t, httplib::DataSink& sink) {
                  const auto events = svc->events_since(id, *cursor);
                  for (const SessionEvent& e : events) {
                    const std::string frame = sse_frame(e);
                    if (!sink.write(frame.data(), frame.size())) return false;
                    *cursor = e.seq + 1;
                    if (e.kind == "Finished") {
                      sink.done();
                      return true;
                    }
                  }
                  if (events.empty() && svc->finished(id)) {
                    sink.done();
                    return true;
                  }
                  if (!svc->wait_for_event(id, *cursor, std::chrono::milliseconds(500))) {
                    if (++*idle >= 30) {  // comment line every ~15 s keeps proxies open
                      *idle = 0;
                      static constexpr std::string_view kKeepAlive = ": keepalive\n\n";
                      return sink.write(kKeepAlive.data(), kKeepAlive.size());
                    }
                  }
                  return true;
                });
          }));

  if (!static_dir.empty()) srv.set_mount_point("/", static_dir.string());
}

ConsoleServer::~ConsoleServer() { stop(); }

int ConsoleServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void ConsoleServer::serve() { impl_->server.listen_after_bind(); }

void ConsoleServer::stop() { impl_->server.stop(); }

}  // namespace cref
