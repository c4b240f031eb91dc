#include "vocalcode/http_server.hpp"

#include <httplib.h>

#include <fmt/core.h>
#include <json.hpp>

namespace vocalcode::http {

using nlohmann::json;
using nlohmann::ordered_json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kOutOfRange:
    case ErrorCode::kMismatch:
      return 400;
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kSequencing:
    case ErrorCode::kDuplicateLabel:
      return 409;
    case ErrorCode::kDegenerate:
    case ErrorCode::kEmptyData:
      return 422;
    case ErrorCode::kQuotaExhausted:
      return 429;
    case ErrorCode::kIo:
    case ErrorCode::kUnsupportedFormat:
      return 500;
  }
  return 500;
}

namespace {

void send_json(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, http_status(code), {{"code", std::string(to_string(code))}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  try {
    return req.body.empty() ? json::object() : json::parse(req.body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("request body is not JSON: {}", e.what()));
  }
}

template <class T>
T field_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("field '{}' has the wrong type", key));
  }
}

service::CreateSessionRequest create_request(const json& body) {
  if (!body.is_object()) throw Error(ErrorCode::kInvalidArgument, "body must be a JSON object");
  service::CreateSessionRequest r;
  if (!body.contains("coder_id")) throw Error(ErrorCode::kInvalidArgument, "coder_id is required");
  r.coder_id = field_or<std::string>(body, "coder_id", "");
  r.pass.phase = scheme::phase_from_string(field_or<std::string>(body, "phase", "ground_truth"));
  r.pass.set_index = field_or<int>(body, "set_index", 0);
  const json spec = body.contains("queue_spec") ? body.at("queue_spec") : json::object();
  if (!spec.is_object()) throw Error(ErrorCode::kInvalidArgument, "queue_spec must be an object");
  r.spec.rng_seed = field_or<std::uint64_t>(spec, "seed", 0);
  r.spec.n_duplicates = field_or<std::size_t>(spec, "n_duplicates", 0);
  r.spec.segment_ids = field_or<std::vector<std::string>>(spec, "segment_ids", {});
  return r;
}

}  // namespace

struct Server::Impl {
  explicit Impl(service::AnnotationService& s) : svc(s) { routes(); }

  template <class F>
  httplib::Server::Handler wrap(F&& f) {
    return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const std::exception& e) {
        send_error(res, ErrorCode::kIo, e.what());
      }
    };
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Expose-Headers", "X-Remaining-Plays"}});
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Post("/sessions", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const auto created = svc.create_session(create_request(parse_body(req)));
      send_json(res, created.resumed ? 200 : 201,
                {{"session_id", created.session_id},
                 {"resumed", created.resumed},
                 {"total_items", created.total_items}});
    }));

    server.Get(R"(/sessions/([^/]+)/next)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service::to_json(svc.next_item(req.matches[1])));
    }));

    server.Post(R"(/sessions/([^/]+)/items/([^/]+)/play)",
                wrap([this](const httplib::Request& req, httplib::Response& res) {
                  auto played = svc.play(req.matches[1], req.matches[2]);
                  res.status = 200;
                  res.set_header("X-Remaining-Plays", std::to_string(played.remaining_plays));
                  res.set_header("Cache-Control", "no-store");
                  res.set_content(std::string(played.wav.begin(), played.wav.end()), "audio/wav");
                }));

    server.Post(R"(/sessions/([^/]+)/items/([^/]+)/label)",
                wrap([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  if (!body.is_object() || !body.contains("class") || !body.at("class").is_number_integer()) {
                    throw Error(ErrorCode::kInvalidArgument, "body must be {\"class\": 1..5}");
                  }
                  const auto r = svc.label(req.matches[1], req.matches[2], body.at("class").get<int>());
                  ordered_json j;
                  j["accepted"] = true;
                  j["item_id"] = r.item_id;
                  j["class"] = scheme::code(r.cls);
                  j["next"] = service::to_json(r.next);
                  send_json(res, 200, j);
                }));

    server.Get(R"(/sessions/([^/]+)/stats)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service::to_json(svc.stats(req.matches[1])));
    }));

    server.Get("/reports/reliability", wrap([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("a") || !req.has_param("b")) {
        throw Error(ErrorCode::kInvalidArgument, "query parameters a and b are required");
      }
      send_json(res, 200, svc.reliability_report(req.get_param_value("a"), req.get_param_value("b")));
    }));

    server.Get("/reports/analytics", wrap([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("metric") || !req.has_param("group_by")) {
        throw Error(ErrorCode::kInvalidArgument, "query parameters metric and group_by are required");
      }
      const auto metric = analytics::metric_from_string(req.get_param_value("metric"));
      auto variant = analytics::TTestVariant::kPooled;
      if (req.has_param("test")) {
        const auto t = req.get_param_value("test");
        if (t == "welch") variant = analytics::TTestVariant::kWelch;
        else if (t != "pooled") throw Error(ErrorCode::kInvalidArgument, "test must be pooled or welch");
      }
      std::optional<std::string> a, b;
      if (req.has_param("a")) a = req.get_param_value("a");
      if (req.has_param("b")) b = req.get_param_value("b");
      send_json(res, 200, svc.analytics_report(metric, req.get_param_value("group_by"), variant, a, b));
    }));

    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty() && res.status == 404) send_error(res, ErrorCode::kNotFound, "no such route");
    });
  }

  service::AnnotationService& svc;
  httplib::Server server;
};

Server::Server(service::AnnotationService& service) : impl_(std::make_unique<Impl>(service)) {}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::kIo, fmt::format("cannot bind {}:{}", host, port));
  return bound;
}

void Server::listen() {
  if (!impl_->server.listen_after_bind()) throw Error(ErrorCode::kIo, "server stopped with an error");
}

void Server::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

bool Server::running() const { return impl_->server.is_running(); }

}  // namespace vocalcode::http
