// SPDX-License-Identifier: Apache-2.0
#include "emoface/server.hpp"

#include "emoface/image_io.hpp"
#include "httplib.h"

namespace emoface {

using json = nlohmann::json;

namespace {

std::string png_b64(const Tensor& image) { return base64_encode(encode_png(image)); }

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply_json(res, status, {{"error", message}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw std::invalid_argument("request body must be a JSON object");
  return j;
}

// Maps pipeline exceptions onto status codes.
template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const NotFoundError& e) {
    reply_error(res, 404, e.what());
  } catch (const json::exception& e) {
    reply_error(res, 400, e.what());
  } catch (const LabelError& e) {
    reply_error(res, 400, e.what());
  } catch (const std::invalid_argument& e) {
    reply_error(res, 400, e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, e.what());
  }
}

}  // namespace

struct HttpService::Impl {
  httplib::Server server;
};

HttpService::HttpService(Pipeline& pipeline) : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  Pipeline& p = pipeline;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/health", [&p](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply_json(res, 200, p.health()); });
  });

  srv.Get("/faces", [&p](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json out = json::array();
      for (const auto& f : p.faces())
        out.push_back({{"face_id", f.face_id}, {"model_id", f.record.model_id}, {"png", png_b64(f.image)}});
      reply_json(res, 200, out);
    });
  });

  srv.Post("/session", [&p](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      const auto s = p.create_session(body.value("face_id", std::string("random")));
      reply_json(res, 200,
                 {{"session_id", s->session_id},
                  {"base_face_id", s->base_face_id},
                  {"base_face_png", png_b64(s->base_face)}});
    });
  });

  srv.Post("/chat", [&p](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      std::optional<json> override_target;
      if (body.contains("emotion_override") && !body.at("emotion_override").is_null())
        override_target = body.at("emotion_override");
      const Reply r = p.respond(body.at("session_id").get<std::string>(),
                                body.at("text").get<std::string>(), override_target);
      reply_json(res, 200,
                 {{"text", r.text},
                  {"emotion", to_string(r.emotion)},
                  {"au_target", au_to_json(r.au_target)},
                  {"face_png", png_b64(r.face)},
                  {"latency_ms", r.latency.to_json()}});
    });
  });
}

HttpService::~HttpService() = default;

int HttpService::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw ConfigError("cannot bind " + host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw ConfigError("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
  }
  return bound;
}

void HttpService::run() { impl_->server.listen_after_bind(); }
void HttpService::stop() { impl_->server.stop(); }
void HttpService::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace emoface
