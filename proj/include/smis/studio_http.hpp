#pragma once

// Routes of the studio API on an httplib server.

#include <algorithm>
#include <string>
#include <vector>

#include <httplib.h>

#include "smis/studio.hpp"

namespace smis {

inline constexpr std::size_t kMaxRequestBody = 4 << 20;

inline void mount_studio(httplib::Server& server, const ModelRegistry& registry, std::vector<std::string> origins) {
  auto reply = [](httplib::Response& res, const StudioResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.set_payload_max_length(kMaxRequestBody);
  server.set_post_routing_handler([origins = std::move(origins)](const httplib::Request& req, httplib::Response& res) {
    const auto origin = req.get_header_value("Origin");
    if (!origin.empty() && std::find(origins.begin(), origins.end(), origin) != origins.end()) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
    }
  });
  server.Options(R"(/models.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Get("/models", [&registry, reply](const httplib::Request&, httplib::Response& res) { reply(res, studio_list_models(registry)); });
  server.Get(R"(/models/([^/]+)/classes)", [&registry, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, studio_classes(registry, req.matches[1]));
  });
  server.Post(R"(/models/([^/]+)/synthesize)", [&registry, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, studio_synthesize(registry, req.matches[1], req.body));
  });
  server.Post(R"(/models/([^/]+)/pseudo-preview)", [&registry, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, studio_pseudo_preview(registry, req.matches[1], req.body));
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(json{{"error", msg}}.dump(), "application/json");
  });
}

}  // namespace smis
