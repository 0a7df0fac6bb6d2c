#include "privq/mock_server.hpp"

#include <httplib.h>

#include "privq/error.hpp"

namespace privq {

MockHttpServer::MockHttpServer(std::shared_ptr<MockBackend> backend)
    : backend_(std::move(backend)), server_(std::make_unique<httplib::Server>()) {
  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server_->Post(R"(/([^/]+)(/.*))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, backend_->handle_post(req.matches[1].str(), req.matches[2].str(), req.body));
  });
  server_->Get(R"(/([^/]+)(/.*))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, backend_->handle_get(req.matches[1].str(), req.matches[2].str()));
  });
  port_ = server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw Error(ErrorCode::kIo, "mock server could not bind a port");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

MockHttpServer::~MockHttpServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockHttpServer::base_url(const std::string& endpoint_id) const {
  return "http://127.0.0.1:" + std::to_string(port_) + "/" + endpoint_id + "/v1";
}

}  // namespace privq
