#include "freediff/service/server.hpp"

#include "freediff/analysis.hpp"
#include "freediff/error.hpp"
#include "freediff/latent_io.hpp"
#include "httplib.h"

namespace freediff::service {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, const std::string& field) {
  json body{{"error", message}};
  if (!field.empty()) body["field"] = field;
  send_json(res, status, body);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Validation, std::string("body is not valid JSON: ") + e.what(), "body");
  }
}

// Runs a handler, rendering library errors as {"error", "field"} bodies.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.kind()), e.what(), e.field());
    } catch (const json::exception& e) {
      send_error(res, 400, e.what(), "body");
    } catch (const std::exception& e) {
      send_error(res, 500, e.what(), "");
    }
  };
}

}  // namespace

struct Server::Impl {
  explicit Impl(StoreOptions options) : store(std::move(options)) {}

  SessionStore store;
  httplib::Server http;

  void routes() {
    http.Get("/presets", guarded([](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, preset_catalog_json());
    }));

    http.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json body = parse_body(req);
      const json& cfg = body.contains("config") ? body["config"] : body;
      const std::string id = store.create(session_config_from_json(cfg));
      send_json(res, 201, {{"id", id}, {"state", "created"}});
    }));

    http.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"sessions", store.list()}});
    }));

    http.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, store.get(req.matches[1]).to_json());
    }));

    http.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      store.remove(req.matches[1]);
      send_json(res, 200, {{"deleted", std::string(req.matches[1])}});
    }));

    http.Post(R"(/sessions/([^/]+)/latent)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const Shape shape = store.upload_latent(req.matches[1], req.body);
                send_json(res, 200, {{"shape", {shape.channels, shape.height, shape.width}}});
              }));

    http.Post(R"(/sessions/([^/]+)/invert)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const std::string id = req.matches[1];
                const std::string job = store.start_invert(id);
                send_json(res, 202, {{"job", job}, {"progress", store.job(id, job).to_json()}});
              }));

    http.Post(R"(/sessions/([^/]+)/edit)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const std::string id = req.matches[1];
                const std::string job = store.start_edit(id, EditRequest::from_json(parse_body(req)));
                send_json(res, 202, {{"job", job}, {"progress", store.job(id, job).to_json()}});
              }));

    http.Get(R"(/sessions/([^/]+)/jobs/([^/]+))",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, store.job(req.matches[1], req.matches[2]).to_json());
             }));

    http.Get(R"(/sessions/([^/]+)/artifacts)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, {{"artifacts", store.get(req.matches[1]).artifacts}});
             }));

    http.Get(R"(/sessions/([^/]+)/artifacts/(.+))",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               const std::string name = req.matches[2];
               const std::string bytes = store.read_artifact(req.matches[1], name);
               const bool is_json = name.size() > 5 && name.ends_with(".json");
               res.status = 200;
               res.set_content(bytes, is_json ? "application/json" : "application/octet-stream");
             }));

    // F_diff between two latent artifacts, optionally across sessions:
    //   ?a=<name>&b=<name>[&other=<session id>]
    http.Get(R"(/sessions/([^/]+)/fdiff)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               if (!req.has_param("a") || !req.has_param("b")) {
                 throw Error(ErrorKind::Validation, "fdiff needs artifacts a and b", "a");
               }
               const std::string other = req.has_param("other") ? req.get_param_value("other") : id;
               const LatentTensor a = decode_latent(store.read_artifact(id, req.get_param_value("a")));
               const LatentTensor b = decode_latent(store.read_artifact(other, req.get_param_value("b")));
               const FrequencyMap d = f_diff(a, b);
               send_json(res, 200,
                         {{"height", d.height},
                          {"width", d.width},
                          {"values", d.values},
                          {"radial_profile", radial_profile(d)}});
             }));
  }
};

Server::Server(StoreOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  impl_->routes();
}

Server::~Server() { stop(); }

bool Server::listen(const std::string& host, int port) { return impl_->http.listen(host, port); }

int Server::bind_any_port(const std::string& host) { return impl_->http.bind_to_any_port(host); }

bool Server::listen_after_bind() { return impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_) impl_->http.stop();
}

void Server::wait_until_ready() const { impl_->http.wait_until_ready(); }

SessionStore& Server::store() { return impl_->store; }

}  // namespace freediff::service
