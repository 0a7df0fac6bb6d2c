#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "privq/core.hpp"

namespace privq {

enum class EndpointKind { kChat, kEmbedding };
enum class Trust { kTrusted, kUntrusted };

/// One chat or embedding endpoint. The trust tag decides whether outbound
/// payloads go through the privacy guard.
struct EndpointSpec {
  std::string id;
  std::string base_url;
  EndpointKind kind = EndpointKind::kChat;
  Trust trust = Trust::kTrusted;
  std::string model_name;
  std::string api_key_env;
  int max_concurrency = 1;
  double requests_per_second = 10.0;

  void validate() const;
  bool trusted() const { return trust == Trust::kTrusted; }

  bool operator==(const EndpointSpec&) const = default;
};

enum class Role { kSystem, kUser, kAssistant };

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  DecodingParams decoding;
  // Sent on the wire as `seed`; distinguishes repeated samples so the cache
  // does not collapse them.
  std::optional<std::uint64_t> seed;
  // Folded into the cache key only, e.g. the served checkpoint digest.
  std::string cache_salt;
};

struct ChatResult {
  std::string text;
  bool cached = false;
  std::int64_t latency_ms = 0;
};

std::string to_string(EndpointKind kind);
std::string to_string(Trust trust);
std::string to_string(Role role);
EndpointKind endpoint_kind_from_string(const std::string& s);
Trust trust_from_string(const std::string& s);
Role role_from_string(const std::string& s);

void to_json(Json& j, const EndpointSpec& v);
void from_json(const Json& j, EndpointSpec& v);
void to_json(Json& j, const ChatMessage& v);
void from_json(const Json& j, ChatMessage& v);

// ---------------------------------------------------------------------------
// Privacy guard

/// Lowercase (ASCII and common Latin/Greek/Cyrillic), collapse whitespace
/// runs to one space, trim.
std::string normalize_text(std::string_view text);

/// True iff the normalized payload contains none of the normalized forbidden
/// strings. Empty forbidden strings are ignored.
bool guard_outbound(std::string_view payload, std::span<const std::string> forbidden);

// ---------------------------------------------------------------------------
// Transport

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Moves bytes. Throws Error(kUnreachable) when no response was obtained.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const EndpointSpec& endpoint, const std::string& path,
                            const std::string& body,
                            const std::map<std::string, std::string>& headers) = 0;
  virtual HttpResponse get(const EndpointSpec& endpoint, const std::string& path) = 0;
};

struct HttpOptions {
  std::chrono::milliseconds connect_timeout{5000};
  std::chrono::milliseconds read_timeout{120000};
};

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(HttpOptions options = {}) : options_(options) {}
  HttpResponse post(const EndpointSpec& endpoint, const std::string& path,
                    const std::string& body,
                    const std::map<std::string, std::string>& headers) override;
  HttpResponse get(const EndpointSpec& endpoint, const std::string& path) override;

 private:
  HttpOptions options_;
};

// ---------------------------------------------------------------------------
// Cache

/// Content-addressed response cache: an in-memory index backed by
/// `<dir>/<endpoint_id>/<digest>.json` when a directory is configured.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}

  std::optional<std::string> lookup(const std::string& endpoint_id, const std::string& digest);
  void store(const std::string& endpoint_id, const std::string& digest, const std::string& text);
  std::filesystem::path entry_path(const std::string& endpoint_id,
                                   const std::string& digest) const;

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
  std::map<std::string, std::string> memory_;
};

// ---------------------------------------------------------------------------
// Client

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{200};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{5000};

  std::chrono::milliseconds delay_for(int attempt) const;
};

struct ClientOptions {
  RetryPolicy retry;
  bool cache_enabled = true;
  std::filesystem::path cache_dir;  // empty: memory-only cache
  // Always forbidden on untrusted endpoints, in addition to per-call strings.
  std::vector<std::string> extra_secrets;
};

struct ClientStats {
  std::uint64_t network_attempts = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t guard_blocks = 0;
};

/// Thread-safe. Per-endpoint concurrency caps and rate limits are shared by
/// all callers of one client instance.
class LlmClient {
 public:
  LlmClient(std::shared_ptr<Transport> transport, ClientOptions options = {});
  ~LlmClient();

  /// `forbidden` holds raw secrets (typically the original query) that must
  /// not reach an untrusted endpoint; ignored for trusted endpoints.
  ChatResult chat(const EndpointSpec& endpoint, const ChatRequest& request,
                  std::span<const std::string> forbidden = {});

  std::vector<std::vector<double>> embed(const EndpointSpec& endpoint,
                                         std::span<const std::string> texts,
                                         std::span<const std::string> forbidden = {});

  /// One response per sub-query, ordered by index. Every sub-query is checked
  /// against the guard before the first request is sent.
  std::vector<ExternalResponse> dispatch_group(const EndpointSpec& endpoint,
                                               const SubQueryGroup& group,
                                               const DecodingParams& decoding,
                                               std::span<const std::string> forbidden = {});

  /// GET <base_url>/health as JSON.
  Json health(const EndpointSpec& endpoint);

  std::string cache_key(const EndpointSpec& endpoint, const ChatRequest& request) const;
  ClientStats stats() const;
  const ClientOptions& options() const { return options_; }

 private:
  struct EndpointState;
  class Slot;

  EndpointState& state_for(const EndpointSpec& endpoint);
  void enforce_guard(const EndpointSpec& endpoint, std::string_view body,
                     std::span<const std::string> contents,
                     std::span<const std::string> forbidden);
  std::string send_with_retry(const EndpointSpec& endpoint, const std::string& path,
                              const std::string& body);

  std::shared_ptr<Transport> transport_;
  ClientOptions options_;
  ResponseCache cache_;

  std::mutex states_mu_;
  std::map<std::string, std::unique_ptr<EndpointState>> states_;

  std::mutex inflight_mu_;
  std::map<std::string, std::shared_future<std::string>> inflight_;

  std::atomic<std::uint64_t> network_attempts_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
  std::atomic<std::uint64_t> guard_blocks_{0};
};

/// Request body in the chat-completions wire format.
Json chat_request_body(const EndpointSpec& endpoint, const ChatRequest& request);

}  // namespace privq
