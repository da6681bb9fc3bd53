#pragma once

#include <memory>
#include <string>

#include "freediff/service/session_store.hpp"

namespace freediff::service {

/// HTTP front end over a SessionStore.
class Server {
 public:
  explicit Server(StoreOptions options);
  ~Server();

  /// Binds and serves until stop(); returns false if binding failed.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port and returns it (-1 on failure); call
  /// listen_after_bind() to serve.
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

  SessionStore& store();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace freediff::service
