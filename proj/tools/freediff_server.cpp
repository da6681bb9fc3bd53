#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>

#include "freediff/error.hpp"
#include "freediff/service/server.hpp"

namespace {

freediff::service::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

int main() {
  const std::string root = env_or("FREEDIFF_DATA_ROOT", "freediff-data");
  const std::string bind = env_or("FREEDIFF_BIND", "127.0.0.1:8080");
  const std::string remote = env_or("FREEDIFF_REMOTE_ENDPOINT", "");

  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) {
    std::cerr << "FREEDIFF_BIND must be host:port, got '" << bind << "'\n";
    return 2;
  }
  const std::string host = bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(bind.substr(colon + 1));
  } catch (const std::exception&) {
    std::cerr << "FREEDIFF_BIND has an invalid port: '" << bind << "'\n";
    return 2;
  }

  try {
    freediff::service::Server server({root, remote});
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "freediff service: data root " << root << ", listening on " << host << ":" << port << "\n";
    if (!server.listen(host, port)) {
      std::cerr << "cannot bind " << bind << "\n";
      return 1;
    }
    g_server = nullptr;
  } catch (const freediff::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
