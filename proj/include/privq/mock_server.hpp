#pragma once

#include <memory>
#include <string>
#include <thread>

#include "privq/mock_backend.hpp"

namespace httplib {
class Server;
}

namespace privq {

/// Serves a MockBackend over loopback HTTP. Endpoint `id` lives at
/// `base_url(id)` = http://127.0.0.1:<port>/<id>/v1, so captured requests
/// record which endpoint they were addressed to.
class MockHttpServer {
 public:
  explicit MockHttpServer(std::shared_ptr<MockBackend> backend);
  ~MockHttpServer();
  MockHttpServer(const MockHttpServer&) = delete;
  MockHttpServer& operator=(const MockHttpServer&) = delete;

  int port() const { return port_; }
  std::string base_url(const std::string& endpoint_id) const;
  MockBackend& backend() { return *backend_; }

 private:
  std::shared_ptr<MockBackend> backend_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace privq
