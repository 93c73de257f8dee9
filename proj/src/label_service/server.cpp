#include "rlhf/label_service/server.hpp"

#include <cstdlib>

#include <httplib.h>

namespace rlhf::label_service {
namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Runs a handler, turning exceptions into JSON error bodies.
template <class F>
auto guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      reply(res, static_cast<int>(e.code()), {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
    } catch (const std::invalid_argument& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

nlohmann::json body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body);
  if (!j.is_object()) throw ServiceError(ServiceError::Code::kBadRequest, "body must be a JSON object");
  return j;
}

}  // namespace

BindAddress parse_bind(const std::string& s) {
  BindAddress a;
  const auto colon = s.rfind(':');
  std::string port = s;
  if (colon != std::string::npos) {
    if (colon > 0) a.host = s.substr(0, colon);
    port = s.substr(colon + 1);
  }
  std::size_t used = 0;
  try {
    a.port = std::stoi(port, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != port.size() || port.empty() || a.port < 0 || a.port > 65535)
    throw std::invalid_argument("bad bind address '" + s + "'");
  return a;
}

BindAddress bind_from_env() {
  const char* v = std::getenv(kBindEnv);
  return v && *v ? parse_bind(v) : BindAddress{};
}

LabelServer::LabelServer(LabelService& service)
    : service_(service), http_(std::make_unique<httplib::Server>()) {
  auto& s = *http_;
  s.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}, {"version", kVersion}});
  }));
  s.Post("/tasks", guarded([this](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, {{"task_id", service_.enqueue(task_query_from_json(body(req)))}});
  }));
  s.Get("/tasks/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto a = service_.next_task(req.get_param_value("labeler"));
    if (!a) {
      res.status = 204;
      return;
    }
    reply(res, 200, to_json(*a));
  }));
  s.Post("/labels", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto j = body(req);
    for (const char* k : {"task_id", "labeler", "choice"})
      if (!j.contains(k)) throw ServiceError(ServiceError::Code::kBadRequest, std::string("missing field '") + k + "'");
    service_.submit(j["task_id"].get<std::string>(), j["labeler"].get<std::string>(),
                    j["choice"].get<int>());
    reply(res, 200, {{"accepted", true}});
  }));
  s.Get("/stats/agreement", guarded([this](const httplib::Request&, httplib::Response& res) {
    try {
      reply(res, 200, to_json(service_.agreement()));
    } catch (const std::invalid_argument&) {
      reply(res, 200, {{"pairwise_same_choice_probability", nullptr}, {"n_pairs", 0}, {"baseline", 0.25}});
    }
  }));
  s.Get("/stats/progress", guarded([this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, to_json(service_.progress()));
  }));
  s.Get("/stats/eval", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto kind = task_kind_from_string(req.has_param("kind") ? req.get_param_value("kind") : "eval2");
    if (kind != TaskKind::kEval2 && kind != TaskKind::kEval4)
      throw ServiceError(ServiceError::Code::kBadRequest, "kind must be eval2 or eval4");
    reply(res, 200, {{"kind", to_string(kind)}, {"wins", service_.eval_wins(kind)}});
  }));
  s.Post("/stop", guarded([this](const httplib::Request& req, httplib::Response& res) {
    bool stopped = true;
    if (!req.body.empty()) stopped = body(req).value("stopped", true);
    service_.andon_stop(stopped);
    reply(res, 200, {{"stopped", service_.stop_status()}});
  }));
  s.Get("/stop", guarded([this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"stopped", service_.stop_status()}});
  }));
}

LabelServer::~LabelServer() { stop(); }

int LabelServer::start(const BindAddress& addr) {
  int port = addr.port;
  if (port == 0) {
    port = http_->bind_to_any_port(addr.host);
  } else if (!http_->bind_to_port(addr.host, port)) {
    port = -1;
  }
  if (port < 0) throw std::runtime_error("cannot bind " + addr.host + ":" + std::to_string(addr.port));
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return port;
}

void LabelServer::run(const BindAddress& addr) {
  if (!http_->listen(addr.host, addr.port))
    throw std::runtime_error("cannot listen on " + addr.host + ":" + std::to_string(addr.port));
}

void LabelServer::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace rlhf::label_service
