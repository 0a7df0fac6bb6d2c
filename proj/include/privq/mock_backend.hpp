#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "privq/llm_client.hpp"

namespace privq {

/// Dimension of the mock embedding.
inline constexpr std::size_t kMockEmbeddingDim = 64;

struct MockChatCall {
  std::string endpoint_id;
  std::string model;
  std::vector<ChatMessage> messages;
  std::optional<std::uint64_t> seed;
  DecodingParams decoding;

  const std::string& last_user_content() const;
};

struct MockReply {
  int status = 200;
  std::string content;

  static MockReply ok(std::string content) { return {200, std::move(content)}; }
  static MockReply error(int status) { return {status, {}}; }
};

using ChatResponder = std::function<MockReply(const MockChatCall&)>;

struct CapturedRequest {
  std::string endpoint_id;
  std::string method;
  std::string path;
  std::string body;
};

/// "MOCK[<model>]:<last user message content>"
std::string mock_echo(const std::string& model, const std::vector<ChatMessage>& messages);

/// Seeded hashed bag-of-words over tokenize(text), kMockEmbeddingDim wide.
std::vector<double> mock_embedding(const std::string& text, std::uint64_t seed = 0);

/// Offline implementation of the chat-completions and embeddings wire
/// formats. Chat endpoints echo unless a responder is installed; every
/// request is captured and in-flight counts are tracked per endpoint.
class MockBackend {
 public:
  /// An empty endpoint id installs the fallback responder.
  void set_chat_responder(const std::string& endpoint_id, ChatResponder responder);
  void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }
  void set_health_digest(const std::string& endpoint_id, std::string digest);
  void set_embedding_seed(std::uint64_t seed) { embedding_seed_ = seed; }

  HttpResponse handle_post(const std::string& endpoint_id, const std::string& path,
                           const std::string& body);
  HttpResponse handle_get(const std::string& endpoint_id, const std::string& path);

  std::vector<CapturedRequest> captured() const;
  std::vector<CapturedRequest> captured_for(const std::string& endpoint_id) const;
  int peak_in_flight(const std::string& endpoint_id) const;
  std::size_t request_count() const;
  void clear_captured();

 private:
  HttpResponse handle_chat(const std::string& endpoint_id, const std::string& body);
  HttpResponse handle_embeddings(const std::string& body);

  mutable std::mutex mu_;
  std::map<std::string, ChatResponder> responders_;
  std::map<std::string, std::string> health_digests_;
  std::vector<CapturedRequest> captured_;
  std::map<std::string, int> in_flight_;
  std::map<std::string, int> peak_;
  std::atomic<std::chrono::milliseconds> latency_{std::chrono::milliseconds(0)};
  std::atomic<std::uint64_t> embedding_seed_{0};
};

/// In-process transport over a MockBackend; endpoint ids route requests.
class MockTransport : public Transport {
 public:
  explicit MockTransport(std::shared_ptr<MockBackend> backend) : backend_(std::move(backend)) {}
  HttpResponse post(const EndpointSpec& endpoint, const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& headers) override;
  HttpResponse get(const EndpointSpec& endpoint, const std::string& path) override;
  MockBackend& backend() { return *backend_; }

 private:
  std::shared_ptr<MockBackend> backend_;
};

// Role-aware responders used by --mock runs so that every pipeline stage
// receives well-formed text without a model.

/// Emits an n-item numbered list of generalized questions built from a
/// seeded subset of the question's content words.
ChatResponder mock_decomposer_responder();
/// Emits "Q: ...\nA: ..." blocks from the document's sentences.
ChatResponder mock_qa_writer_responder();
/// Emits "Score: x.y" with x.y in [3.0, 5.0], derived from the request text.
ChatResponder mock_judge_responder();

}  // namespace privq
