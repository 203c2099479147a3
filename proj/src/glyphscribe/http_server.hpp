#pragma once

#include "glyphscribe/error.hpp"
#include "glyphscribe/service.hpp"

#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace glyphscribe::service {

/// HTTP status for an error code.
int http_status(ErrorCode code);

/// JSON-over-HTTP front end. Every non-2xx response carries {error, detail}.
class HttpServer {
public:
  explicit HttpServer(std::shared_ptr<Service> service);
  ~HttpServer();
  HttpServer(const HttpServer &) = delete;
  HttpServer &operator=(const HttpServer &) = delete;

  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string &host, int port);
  /// Serves until stop(); blocks the calling thread.
  void listen();
  /// bind + listen on a background thread.
  int start(const std::string &host, int port);
  void stop();

private:
  void routes();

  std::shared_ptr<Service> service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

} // namespace glyphscribe::service
