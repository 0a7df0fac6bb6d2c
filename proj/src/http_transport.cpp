#include <httplib.h>

#include "privq/error.hpp"
#include "privq/llm_client.hpp"

namespace privq {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kConfigInvalid, "base_url '" + base_url + "' has no scheme");
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = base_url.substr(0, path_start);
  if (path_start != std::string::npos) out.prefix = base_url.substr(path_start);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

httplib::Client make_client(const SplitUrl& url, const HttpOptions& options) {
  httplib::Client cli(url.origin);
  cli.set_connection_timeout(options.connect_timeout);
  cli.set_read_timeout(options.read_timeout);
  cli.set_write_timeout(options.read_timeout);
  cli.set_keep_alive(false);
  return cli;
}

[[noreturn]] void throw_unreachable(const EndpointSpec& endpoint, httplib::Error err) {
  throw Error(ErrorCode::kUnreachable,
              "endpoint '" + endpoint.id + "' (" + endpoint.base_url + "): " + httplib::to_string(err));
}

}  // namespace

HttpResponse HttpTransport::post(const EndpointSpec& endpoint, const std::string& path,
                                 const std::string& body,
                                 const std::map<std::string, std::string>& headers) {
  const SplitUrl url = split_url(endpoint.base_url);
  auto cli = make_client(url, options_);
  httplib::Headers h;
  std::string content_type = "application/json";
  for (const auto& [k, v] : headers) {
    if (k == "Content-Type") {
      content_type = v;
    } else {
      h.emplace(k, v);
    }
  }
  auto res = cli.Post(url.prefix + path, h, body, content_type);
  if (!res) throw_unreachable(endpoint, res.error());
  return {res->status, res->body};
}

HttpResponse HttpTransport::get(const EndpointSpec& endpoint, const std::string& path) {
  const SplitUrl url = split_url(endpoint.base_url);
  auto cli = make_client(url, options_);
  auto res = cli.Get(url.prefix + path);
  if (!res) throw_unreachable(endpoint, res.error());
  return {res->status, res->body};
}

}  // namespace privq
