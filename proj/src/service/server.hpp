#pragma once

#include <cstdint>
#include <memory>
#include <string>

namespace ffield::service {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int default_width = 160;
  int default_height = 120;
  int default_samples = 64;
};

// HTTP front end over training sessions. Routes are documented in
// docs/http_api.md.
class Server {
 public:
  explicit Server(ServerOptions options);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts serving on a background thread; returns the bound port.
  int start();
  // Blocks until stop() is called from another thread.
  void wait();
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ffield::service
