#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <thread>

namespace httplib {
class Server;
}

namespace rppd {

struct HttpReply {
  int status = 200;
  std::string body;
};

// Loopback embedding provider speaking the /embed protocol on top of
// stub_embed. Accepts models named "stub-<seed>" and answers with vectors of
// the configured dimension; any other model is a 404.
class StubProvider {
 public:
  explicit StubProvider(std::size_t dim);
  ~StubProvider();

  StubProvider(const StubProvider&) = delete;
  StubProvider& operator=(const StubProvider&) = delete;

  std::size_t dim() const noexcept { return dim_; }

  // Request handling without a socket.
  HttpReply handle_embed(std::string_view body) const;

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);

  // Binds and serves on the calling thread until stop().
  void serve(const std::string& host, int port);

  void stop();

 private:
  void install_routes();

  std::size_t dim_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace rppd
