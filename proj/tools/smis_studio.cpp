// smis_studio: HTTP front end for trained models.
//
//   smis_studio --models DIR [--listen 127.0.0.1:8080] [--allow-origin http://localhost:5173 ...]
//
// GET  /models
// GET  /models/{id}/classes
// POST /models/{id}/synthesize
// POST /models/{id}/pseudo-preview

#include <iostream>

#include <CLI11.hpp>

#include "smis/studio_http.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Studio server for layout-to-image models"};
  std::string models_dir, listen = "127.0.0.1:8080";
  std::vector<std::string> origins;
  app.add_option("--models", models_dir, "Directory searched for model.json descriptors")->required();
  app.add_option("--listen", listen, "host:port to bind");
  app.add_option("--allow-origin", origins, "Browser origin allowed to call the API (repeatable)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const auto colon = listen.rfind(':');
  int port = -1;
  if (colon != std::string::npos) {
    try {
      port = std::stoi(listen.substr(colon + 1));
    } catch (const std::exception&) {
    }
  }
  if (port < 0 || port > 65535) {
    std::cerr << "--listen must be host:port" << std::endl;
    return 2;
  }
  const std::string host = listen.substr(0, colon);

  smis::ModelRegistry registry;
  try {
    registry.load_directory(models_dir);
  } catch (const std::exception& e) {
    std::cerr << "cannot load models: " << e.what() << std::endl;
    return 2;
  }
  for (const auto& m : registry.all()) std::cout << "loaded model " << m->id << " (" << smis::to_string(m->mode()) << ")" << std::endl;

  httplib::Server server;
  smis::mount_studio(server, registry, origins);
  std::cout << "listening on " << host << ":" << port << std::endl;
  if (!server.listen(host, port)) {
    std::cerr << "cannot bind " << listen << std::endl;
    return 3;
  }
  return 0;
}
