#pragma once

#include <memory>
#include <string>

#include "nlq/service/service.hpp"

namespace httplib {
class Server;
}

namespace nlq::service {

// JSON routes over a Service. When `bearer_token` is non-empty every request
// must carry "Authorization: Bearer <token>".
class HttpApi {
 public:
  HttpApi(Service& service, std::string bearer_token = {});
  ~HttpApi();

  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  // Port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  Service& service_;
  std::string token_;
  std::unique_ptr<httplib::Server> server_;
};

// "host:port" split; throws ConfigError.
std::pair<std::string, int> split_listen_address(const std::string& address);

}  // namespace nlq::service
