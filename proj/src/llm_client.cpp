#include "privq/llm_client.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "privq/digest.hpp"
#include "privq/error.hpp"
#include "privq/jsonl.hpp"
#include "privq/parallel.hpp"
#include "privq/unicode.hpp"

namespace privq {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Types

void EndpointSpec::validate() const {
  if (id.empty()) throw Error(ErrorCode::kConfigInvalid, "endpoint id is empty");
  if (base_url.empty()) throw Error(ErrorCode::kConfigInvalid, "endpoint '" + id + "': base_url is empty");
  if (model_name.empty()) throw Error(ErrorCode::kConfigInvalid, "endpoint '" + id + "': model_name is empty");
  if (max_concurrency < 1) throw Error(ErrorCode::kConfigInvalid, "endpoint '" + id + "': max_concurrency must be >= 1");
  if (!(requests_per_second > 0.0)) {
    throw Error(ErrorCode::kConfigInvalid, "endpoint '" + id + "': requests_per_second must be > 0");
  }
}

std::string to_string(EndpointKind kind) {
  return kind == EndpointKind::kChat ? "chat" : "embedding";
}

std::string to_string(Trust trust) {
  return trust == Trust::kTrusted ? "trusted" : "untrusted";
}

std::string to_string(Role role) {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

EndpointKind endpoint_kind_from_string(const std::string& s) {
  if (s == "chat") return EndpointKind::kChat;
  if (s == "embedding") return EndpointKind::kEmbedding;
  throw Error(ErrorCode::kConfigInvalid, "unknown endpoint kind '" + s + "'");
}

Trust trust_from_string(const std::string& s) {
  if (s == "trusted") return Trust::kTrusted;
  if (s == "untrusted") return Trust::kUntrusted;
  throw Error(ErrorCode::kConfigInvalid, "unknown trust tag '" + s + "'");
}

Role role_from_string(const std::string& s) {
  if (s == "system") return Role::kSystem;
  if (s == "user") return Role::kUser;
  if (s == "assistant") return Role::kAssistant;
  throw Error(ErrorCode::kMalformedResponse, "unknown chat role '" + s + "'");
}

void to_json(Json& j, const EndpointSpec& v) {
  j = Json{{"id", v.id},
           {"base_url", v.base_url},
           {"kind", to_string(v.kind)},
           {"trust", to_string(v.trust)},
           {"model_name", v.model_name},
           {"api_key_env", v.api_key_env},
           {"max_concurrency", v.max_concurrency},
           {"requests_per_second", v.requests_per_second}};
}

void from_json(const Json& j, EndpointSpec& v) {
  EndpointSpec d;
  j.at("id").get_to(v.id);
  j.at("base_url").get_to(v.base_url);
  v.kind = endpoint_kind_from_string(j.value("kind", std::string("chat")));
  v.trust = trust_from_string(j.at("trust").get<std::string>());
  j.at("model_name").get_to(v.model_name);
  v.api_key_env = j.value("api_key_env", std::string());
  v.max_concurrency = j.value("max_concurrency", d.max_concurrency);
  v.requests_per_second = j.value("requests_per_second", d.requests_per_second);
}

void to_json(Json& j, const ChatMessage& v) {
  j = Json{{"role", to_string(v.role)}, {"content", v.content}};
}

void from_json(const Json& j, ChatMessage& v) {
  v.role = role_from_string(j.at("role").get<std::string>());
  j.at("content").get_to(v.content);
}

// ---------------------------------------------------------------------------
// Guard

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char32_t cp : unicode::decode(text)) {
    if (unicode::is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    unicode::append_utf8(out, unicode::to_lower(cp));
  }
  return out;
}

bool guard_outbound(std::string_view payload, std::span<const std::string> forbidden) {
  const std::string normalized = normalize_text(payload);
  for (const auto& f : forbidden) {
    const std::string needle = normalize_text(f);
    if (needle.empty()) continue;
    if (normalized.find(needle) != std::string::npos) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Cache

namespace {

std::string safe_component(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    if (!ok) c = '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

}  // namespace

fs::path ResponseCache::entry_path(const std::string& endpoint_id, const std::string& digest) const {
  return dir_ / safe_component(endpoint_id) / (digest + ".json");
}

std::optional<std::string> ResponseCache::lookup(const std::string& endpoint_id,
                                                 const std::string& digest) {
  const std::string key = endpoint_id + '\n' + digest;
  {
    std::lock_guard lock(mu_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (dir_.empty()) return std::nullopt;
  const fs::path p = entry_path(endpoint_id, digest);
  std::error_code ec;
  if (!fs::exists(p, ec)) return std::nullopt;
  try {
    auto text = Json::parse(read_text_file(p)).at("text").get<std::string>();
    std::lock_guard lock(mu_);
    memory_.emplace(key, text);
    return text;
  } catch (const std::exception&) {
    return std::nullopt;  // corrupt entry is treated as a miss and rewritten
  }
}

void ResponseCache::store(const std::string& endpoint_id, const std::string& digest,
                          const std::string& text) {
  {
    std::lock_guard lock(mu_);
    memory_[endpoint_id + '\n' + digest] = text;
  }
  if (!dir_.empty()) {
    write_text_atomic(entry_path(endpoint_id, digest),
                      Json{{"text", text}}.dump(-1, ' ', false, Json::error_handler_t::replace));
  }
}

// ---------------------------------------------------------------------------
// Client

std::chrono::milliseconds RetryPolicy::delay_for(int attempt) const {
  const double scaled = static_cast<double>(base_delay.count()) *
                        std::pow(multiplier, std::max(0, attempt - 1));
  const auto capped = std::min(scaled, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(capped));
}

struct LlmClient::EndpointState {
  std::mutex mu;
  std::condition_variable cv;
  int in_flight = 0;
  int cap = 1;
  Clock::duration interval{};
  Clock::time_point next_slot{};
};

// Holds one concurrency slot and one rate-limiter token for its lifetime.
class LlmClient::Slot {
 public:
  explicit Slot(EndpointState& st) : st_(st) {
    Clock::time_point start;
    {
      std::unique_lock lock(st_.mu);
      st_.cv.wait(lock, [&] { return st_.in_flight < st_.cap; });
      ++st_.in_flight;
      const auto now = Clock::now();
      start = std::max(now, st_.next_slot);
      st_.next_slot = start + st_.interval;
    }
    std::this_thread::sleep_until(start);
  }
  ~Slot() {
    {
      std::lock_guard lock(st_.mu);
      --st_.in_flight;
    }
    st_.cv.notify_one();
  }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;

 private:
  EndpointState& st_;
};

LlmClient::LlmClient(std::shared_ptr<Transport> transport, ClientOptions options)
    : transport_(std::move(transport)), options_(std::move(options)), cache_(options_.cache_dir) {
  if (!transport_) throw Error(ErrorCode::kInvalidArgument, "transport is null");
  if (options_.retry.max_attempts < 1) {
    throw Error(ErrorCode::kInvalidArgument, "retry.max_attempts must be >= 1");
  }
}

LlmClient::~LlmClient() = default;

LlmClient::EndpointState& LlmClient::state_for(const EndpointSpec& endpoint) {
  std::lock_guard lock(states_mu_);
  auto& slot = states_[endpoint.id];
  if (!slot) {
    slot = std::make_unique<EndpointState>();
    slot->cap = std::max(1, endpoint.max_concurrency);
    slot->interval = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(1.0 / endpoint.requests_per_second));
  }
  return *slot;
}

ClientStats LlmClient::stats() const {
  return {network_attempts_.load(), cache_hits_.load(), guard_blocks_.load()};
}

Json chat_request_body(const EndpointSpec& endpoint, const ChatRequest& request) {
  Json body{{"model", endpoint.model_name},
            {"messages", request.messages},
            {"temperature", request.decoding.temperature},
            {"top_p", request.decoding.top_p},
            {"max_tokens", request.decoding.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

std::string LlmClient::cache_key(const EndpointSpec& endpoint, const ChatRequest& request) const {
  Json key{{"endpoint", endpoint.id},
           {"model", endpoint.model_name},
           {"messages", request.messages},
           {"decoding", request.decoding},
           {"seed", request.seed ? Json(*request.seed) : Json(nullptr)},
           {"salt", request.cache_salt}};
  return sha256_hex(key.dump(-1, ' ', false, Json::error_handler_t::replace));
}

void LlmClient::enforce_guard(const EndpointSpec& endpoint, std::string_view body,
                              std::span<const std::string> contents,
                              std::span<const std::string> forbidden) {
  if (endpoint.trusted()) return;
  std::vector<std::string> all(forbidden.begin(), forbidden.end());
  all.insert(all.end(), options_.extra_secrets.begin(), options_.extra_secrets.end());
  if (all.empty()) return;
  std::string joined;
  bool ok = guard_outbound(body, all);
  for (const auto& c : contents) {
    ok = ok && guard_outbound(c, all);
    joined += c;
    joined += '\n';
  }
  ok = ok && guard_outbound(joined, all);
  if (!ok) {
    ++guard_blocks_;
    throw Error(ErrorCode::kPrivacyViolation,
                "payload for untrusted endpoint '" + endpoint.id + "' contains a protected string");
  }
}

std::string LlmClient::send_with_retry(const EndpointSpec& endpoint, const std::string& path,
                                       const std::string& body) {
  std::map<std::string, std::string> headers{{"Content-Type", "application/json"}};
  if (!endpoint.api_key_env.empty()) {
    if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key && *key) {
      headers["Authorization"] = std::string("Bearer ") + key;
    }
  }
  EndpointState& st = state_for(endpoint);
  const RetryPolicy& retry = options_.retry;
  std::optional<Error> last;
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    try {
      HttpResponse resp;
      {
        Slot slot(st);
        ++network_attempts_;
        resp = transport_->post(endpoint, path, body, headers);
      }
      if (resp.status >= 200 && resp.status < 300) return resp.body;
      if (resp.status == 429) {
        last.emplace(ErrorCode::kRateLimited, "endpoint '" + endpoint.id + "' returned 429");
      } else if (resp.status >= 500) {
        last.emplace(ErrorCode::kUnreachable, "endpoint '" + endpoint.id + "' returned " +
                                                  std::to_string(resp.status));
      } else {
        throw Error(ErrorCode::kHttpError, "endpoint '" + endpoint.id + "' returned " +
                                               std::to_string(resp.status) + ": " +
                                               resp.body.substr(0, 200));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnreachable) throw;
      last.emplace(e);
    }
    if (attempt < retry.max_attempts) std::this_thread::sleep_for(retry.delay_for(attempt));
  }
  throw Error(last->code(), std::string(last->what()) + " (after " +
                                std::to_string(retry.max_attempts) + " attempts)");
}

namespace {

std::string parse_chat_response(const std::string& raw, const std::string& endpoint_id) {
  try {
    const Json j = Json::parse(raw);
    const Json& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw std::runtime_error("content is not a string");
    return content.get<std::string>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kMalformedResponse,
                "chat response from '" + endpoint_id + "': " + e.what());
  }
}

std::vector<std::vector<double>> parse_embedding_response(const std::string& raw,
                                                          const std::string& endpoint_id,
                                                          std::size_t expected) {
  std::vector<std::pair<std::size_t, std::vector<double>>> rows;
  try {
    const Json j = Json::parse(raw);
    const Json& data = j.at("data");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Json& item = data.at(i);
      const std::size_t index = item.value("index", i);
      rows.emplace_back(index, item.at("embedding").get<std::vector<double>>());
    }
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kMalformedResponse,
                "embedding response from '" + endpoint_id + "': " + e.what());
  }
  if (rows.size() != expected) {
    throw Error(ErrorCode::kMalformedResponse, "embedding response from '" + endpoint_id +
                                                   "' has " + std::to_string(rows.size()) +
                                                   " vectors, expected " +
                                                   std::to_string(expected));
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  const std::size_t dim = rows.empty() ? 0 : rows[0].second.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != i) {
      throw Error(ErrorCode::kMalformedResponse, "embedding indices from '" + endpoint_id +
                                                     "' are not 0..n-1");
    }
    if (rows[i].second.size() != dim || dim == 0) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "endpoint '" + endpoint_id + "' returned ragged embeddings");
    }
    out.push_back(std::move(rows[i].second));
  }
  return out;
}

}  // namespace

ChatResult LlmClient::chat(const EndpointSpec& endpoint, const ChatRequest& request,
                           std::span<const std::string> forbidden) {
  if (endpoint.kind != EndpointKind::kChat) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint '" + endpoint.id + "' is not a chat endpoint");
  }
  if (request.messages.empty()) throw Error(ErrorCode::kInvalidArgument, "no chat messages");
  std::vector<std::string> contents;
  for (const auto& m : request.messages) {
    if (m.role != Role::kAssistant && m.content.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "empty " + to_string(m.role) + " message");
    }
    contents.push_back(m.content);
  }
  request.decoding.validate();

  const std::string body =
      chat_request_body(endpoint, request).dump(-1, ' ', false, Json::error_handler_t::replace);
  enforce_guard(endpoint, body, contents, forbidden);

  const auto start = Clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
  };
  const std::string path = "/chat/completions";
  if (!options_.cache_enabled) {
    std::string text = parse_chat_response(send_with_retry(endpoint, path, body), endpoint.id);
    return {std::move(text), false, elapsed_ms()};
  }

  const std::string key = cache_key(endpoint, request);
  std::promise<std::string> promise;
  std::shared_future<std::string> shared;
  bool owner = false;
  {
    std::lock_guard lock(inflight_mu_);
    if (auto hit = cache_.lookup(endpoint.id, key)) {
      ++cache_hits_;
      return {std::move(*hit), true, elapsed_ms()};
    }
    if (auto it = inflight_.find(key); it != inflight_.end()) {
      shared = it->second;
    } else {
      shared = promise.get_future().share();
      inflight_.emplace(key, shared);
      owner = true;
    }
  }
  if (!owner) {
    std::string text = shared.get();
    ++cache_hits_;
    return {std::move(text), true, elapsed_ms()};
  }
  try {
    std::string text = parse_chat_response(send_with_retry(endpoint, path, body), endpoint.id);
    cache_.store(endpoint.id, key, text);
    promise.set_value(text);
    {
      std::lock_guard lock(inflight_mu_);
      inflight_.erase(key);
    }
    return {std::move(text), false, elapsed_ms()};
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(inflight_mu_);
    inflight_.erase(key);
    throw;
  }
}

std::vector<std::vector<double>> LlmClient::embed(const EndpointSpec& endpoint,
                                                  std::span<const std::string> texts,
                                                  std::span<const std::string> forbidden) {
  if (endpoint.kind != EndpointKind::kEmbedding) {
    throw Error(ErrorCode::kInvalidArgument,
                "endpoint '" + endpoint.id + "' is not an embedding endpoint");
  }
  if (texts.empty()) throw Error(ErrorCode::kInvalidArgument, "embed called with no texts");
  Json body_json{{"model", endpoint.model_name},
                 {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  const std::string body = body_json.dump(-1, ' ', false, Json::error_handler_t::replace);
  enforce_guard(endpoint, body, texts, forbidden);

  const std::string key = sha256_hex("embed\n" + endpoint.id + '\n' + body);
  if (options_.cache_enabled) {
    if (auto hit = cache_.lookup(endpoint.id, key)) {
      ++cache_hits_;
      return Json::parse(*hit).get<std::vector<std::vector<double>>>();
    }
  }
  auto vectors = parse_embedding_response(send_with_retry(endpoint, "/embeddings", body),
                                          endpoint.id, texts.size());
  if (options_.cache_enabled) cache_.store(endpoint.id, key, Json(vectors).dump());
  return vectors;
}

std::vector<ExternalResponse> LlmClient::dispatch_group(const EndpointSpec& endpoint,
                                                        const SubQueryGroup& group,
                                                        const DecodingParams& decoding,
                                                        std::span<const std::string> forbidden) {
  const std::size_t n = group.subqueries.size();
  std::vector<ChatRequest> requests(n);
  for (std::size_t i = 0; i < n; ++i) {
    requests[i].messages = {{Role::kUser, group.subqueries[i].text}};
    requests[i].decoding = decoding;
    const std::string body = chat_request_body(endpoint, requests[i])
                                 .dump(-1, ' ', false, Json::error_handler_t::replace);
    const std::string content[] = {group.subqueries[i].text};
    enforce_guard(endpoint, body, content, forbidden);
  }

  std::vector<ExternalResponse> out(n);
  std::vector<char> failed(n, 0);
  parallel_for(n, static_cast<std::size_t>(std::max(1, endpoint.max_concurrency)),
               [&](std::size_t i) {
                 try {
                   ChatResult r = chat(endpoint, requests[i], forbidden);
                   out[i] = ExternalResponse{group.subqueries[i].index, std::move(r.text),
                                             endpoint.id, r.latency_ms, r.cached};
                 } catch (const Error& e) {
                   if (e.code() == ErrorCode::kPrivacyViolation) throw;
                   failed[i] = 1;
                 }
               });
  std::set<int> failed_indices;
  for (std::size_t i = 0; i < n; ++i) {
    if (failed[i]) failed_indices.insert(group.subqueries[i].index);
  }
  if (!failed_indices.empty()) {
    throw PartialFailure(failed_indices, std::to_string(failed_indices.size()) + " of " +
                                             std::to_string(n) + " sub-queries failed on '" +
                                             endpoint.id + "'");
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.subquery_index < b.subquery_index; });
  return out;
}

Json LlmClient::health(const EndpointSpec& endpoint) {
  HttpResponse resp;
  {
    Slot slot(state_for(endpoint));
    ++network_attempts_;
    resp = transport_->get(endpoint, "/health");
  }
  if (resp.status != 200) {
    throw Error(ErrorCode::kHttpError,
                "health of '" + endpoint.id + "' returned " + std::to_string(resp.status));
  }
  try {
    return Json::parse(resp.body);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kMalformedResponse, "health of '" + endpoint.id + "': " + e.what());
  }
}

}  // namespace privq
