#include "privq/mock_backend.hpp"

#include <cstdio>
#include <random>
#include <regex>
#include <set>
#include <thread>

#include "privq/digest.hpp"
#include "privq/error.hpp"
#include "privq/rng.hpp"
#include "privq/textmetrics.hpp"

namespace privq {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

const std::set<std::string>& stopwords() {
  static const std::set<std::string> kWords = {
      "about", "after", "also", "among", "and", "are", "been", "before", "being", "between",
      "both", "can", "could", "does", "doing", "during", "each", "for", "from", "have",
      "having", "how", "into", "more", "most", "other", "over", "should", "some", "such",
      "than", "that", "the", "their", "them", "then", "there", "these", "they", "this",
      "those", "through", "under", "until", "very", "was", "were", "what", "when", "where",
      "which", "while", "whom", "whose", "why", "will", "with", "within", "without", "would",
      "your"};
  return kWords;
}

std::vector<std::string> content_words(const std::string& text) {
  std::vector<std::string> out;
  for (auto& t : tokenize(text)) {
    if (t.size() >= 4 && !stopwords().contains(t)) out.push_back(std::move(t));
  }
  return out;
}

// Text after `marker` up to the next blank line.
std::optional<std::string> section_after(const std::vector<ChatMessage>& messages,
                                         const std::string& marker) {
  for (const auto& m : messages) {
    if (m.role != Role::kUser) continue;
    const auto pos = m.content.find(marker);
    if (pos == std::string::npos) continue;
    const auto start = pos + marker.size();
    const auto end = m.content.find("\n\n", start);
    return m.content.substr(start, end == std::string::npos ? std::string::npos : end - start);
  }
  return std::nullopt;
}

std::optional<int> find_count(const std::vector<ChatMessage>& messages, const std::regex& re) {
  for (const auto& m : messages) {
    std::smatch match;
    if (m.role == Role::kUser && std::regex_search(m.content, match, re)) {
      return std::stoi(match[1].str());
    }
  }
  return std::nullopt;
}

}  // namespace

const std::string& MockChatCall::last_user_content() const {
  static const std::string kEmpty;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::kUser) return it->content;
  }
  return kEmpty;
}

std::string mock_echo(const std::string& model, const std::vector<ChatMessage>& messages) {
  MockChatCall call;
  call.messages = messages;
  return "MOCK[" + model + "]:" + call.last_user_content();
}

std::vector<double> mock_embedding(const std::string& text, std::uint64_t seed) {
  std::vector<double> v(kMockEmbeddingDim, 0.0);
  for (const auto& tok : tokenize(text)) {
    const std::uint64_t h = fnv1a64(tok, mix_seed(seed, 0x6d6f636b));
    v[h % kMockEmbeddingDim] += 1.0;
  }
  return v;
}

void MockBackend::set_chat_responder(const std::string& endpoint_id, ChatResponder responder) {
  std::lock_guard lock(mu_);
  responders_[endpoint_id] = std::move(responder);
}

void MockBackend::set_health_digest(const std::string& endpoint_id, std::string digest) {
  std::lock_guard lock(mu_);
  health_digests_[endpoint_id] = std::move(digest);
}

HttpResponse MockBackend::handle_post(const std::string& endpoint_id, const std::string& path,
                                      const std::string& body) {
  {
    std::lock_guard lock(mu_);
    captured_.push_back({endpoint_id, "POST", path, body});
    int& cur = ++in_flight_[endpoint_id];
    peak_[endpoint_id] = std::max(peak_[endpoint_id], cur);
  }
  if (const auto lat = latency_.load(); lat.count() > 0) std::this_thread::sleep_for(lat);
  HttpResponse resp;
  try {
    if (ends_with(path, "/chat/completions")) {
      resp = handle_chat(endpoint_id, body);
    } else if (ends_with(path, "/embeddings")) {
      resp = handle_embeddings(body);
    } else {
      resp = {404, R"({"error":"not found"})"};
    }
  } catch (...) {
    std::lock_guard lock(mu_);
    --in_flight_[endpoint_id];
    throw;
  }
  std::lock_guard lock(mu_);
  --in_flight_[endpoint_id];
  return resp;
}

HttpResponse MockBackend::handle_get(const std::string& endpoint_id, const std::string& path) {
  std::lock_guard lock(mu_);
  captured_.push_back({endpoint_id, "GET", path, {}});
  if (!ends_with(path, "/health")) return {404, R"({"error":"not found"})"};
  auto it = health_digests_.find(endpoint_id);
  const std::string digest = it == health_digests_.end() ? std::string() : it->second;
  return {200, Json{{"status", "ok"}, {"checkpoint_digest", digest}}.dump()};
}

HttpResponse MockBackend::handle_chat(const std::string& endpoint_id, const std::string& body) {
  MockChatCall call;
  call.endpoint_id = endpoint_id;
  try {
    const Json j = Json::parse(body);
    call.model = j.at("model").get<std::string>();
    call.messages = j.at("messages").get<std::vector<ChatMessage>>();
    call.decoding.temperature = j.value("temperature", 0.0);
    call.decoding.top_p = j.value("top_p", 1.0);
    call.decoding.max_tokens = j.value("max_tokens", 512);
    if (j.contains("seed")) call.seed = j.at("seed").get<std::uint64_t>();
  } catch (const std::exception& e) {
    return {400, Json{{"error", e.what()}}.dump()};
  }
  ChatResponder responder;
  {
    std::lock_guard lock(mu_);
    if (auto it = responders_.find(endpoint_id); it != responders_.end()) {
      responder = it->second;
    } else if (auto fb = responders_.find(""); fb != responders_.end()) {
      responder = fb->second;
    }
  }
  MockReply reply = responder ? responder(call) : MockReply::ok(mock_echo(call.model, call.messages));
  if (reply.status != 200) {
    return {reply.status, Json{{"error", "scripted failure"}}.dump()};
  }
  Json out{{"id", "mock"},
           {"object", "chat.completion"},
           {"model", call.model},
           {"choices",
            Json::array({Json{{"index", 0},
                              {"message", {{"role", "assistant"}, {"content", reply.content}}},
                              {"finish_reason", "stop"}}})}};
  return {200, out.dump(-1, ' ', false, Json::error_handler_t::replace)};
}

HttpResponse MockBackend::handle_embeddings(const std::string& body) {
  std::vector<std::string> inputs;
  try {
    const Json j = Json::parse(body);
    const Json& input = j.at("input");
    if (input.is_string()) {
      inputs.push_back(input.get<std::string>());
    } else {
      inputs = input.get<std::vector<std::string>>();
    }
  } catch (const std::exception& e) {
    return {400, Json{{"error", e.what()}}.dump()};
  }
  Json data = Json::array();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    data.push_back({{"object", "embedding"},
                    {"index", i},
                    {"embedding", mock_embedding(inputs[i], embedding_seed_.load())}});
  }
  return {200, Json{{"object", "list"}, {"data", data}}.dump()};
}

std::vector<CapturedRequest> MockBackend::captured() const {
  std::lock_guard lock(mu_);
  return captured_;
}

std::vector<CapturedRequest> MockBackend::captured_for(const std::string& endpoint_id) const {
  std::lock_guard lock(mu_);
  std::vector<CapturedRequest> out;
  for (const auto& c : captured_) {
    if (c.endpoint_id == endpoint_id) out.push_back(c);
  }
  return out;
}

int MockBackend::peak_in_flight(const std::string& endpoint_id) const {
  std::lock_guard lock(mu_);
  auto it = peak_.find(endpoint_id);
  return it == peak_.end() ? 0 : it->second;
}

std::size_t MockBackend::request_count() const {
  std::lock_guard lock(mu_);
  return captured_.size();
}

void MockBackend::clear_captured() {
  std::lock_guard lock(mu_);
  captured_.clear();
  peak_.clear();
}

HttpResponse MockTransport::post(const EndpointSpec& endpoint, const std::string& path,
                                 const std::string& body,
                                 const std::map<std::string, std::string>&) {
  return backend_->handle_post(endpoint.id, path, body);
}

HttpResponse MockTransport::get(const EndpointSpec& endpoint, const std::string& path) {
  return backend_->handle_get(endpoint.id, path);
}

// ---------------------------------------------------------------------------
// Role-aware responders

ChatResponder mock_decomposer_responder() {
  return [](const MockChatCall& call) {
    static const std::regex kCount(R"(exactly (\d+))");
    static const char* const kTemplates[] = {
        "What is the general role of {}?",
        "How is {} usually studied?",
        "Which factors commonly influence {}?",
        "What mechanisms are typically associated with {}?",
        "What criteria are used to evaluate {}?",
        "What are common misconceptions about {}?",
        "How do experts usually define {}?",
        "What evidence is generally considered reliable for {}?",
        "Which standard methods are used to measure {}?",
    };
    const std::string question = section_after(call.messages, "QUESTION:\n").value_or("");
    const int n = std::max(1, find_count(call.messages, kCount).value_or(9));
    std::vector<std::string> words = content_words(question);
    if (words.empty()) words.push_back("the topic");
    std::mt19937_64 rng(call.seed.value_or(fnv1a64(question)));
    const auto detail = uniform_index(rng, 3);
    std::string out = "Here are the sub-queries:\n";
    for (int i = 0; i < n; ++i) {
      std::string subject = words[uniform_index(rng, words.size())];
      if (detail > 0 && i % 2 == 0) {
        for (std::uint64_t extra = 0; extra < detail; ++extra) {
          subject += " and " + words[uniform_index(rng, words.size())];
        }
      }
      std::string line = kTemplates[(static_cast<std::size_t>(i) + uniform_index(rng, 9)) % 9];
      line.replace(line.find("{}"), 2, subject);
      out += std::to_string(i + 1) + ". " + line + "\n";
    }
    return MockReply::ok(out);
  };
}

ChatResponder mock_qa_writer_responder() {
  return [](const MockChatCall& call) {
    static const std::regex kCount(R"((\d+) question-answer pair)");
    const std::string doc = section_after(call.messages, "DOCUMENT:\n").value_or("");
    const int count = std::max(1, find_count(call.messages, kCount).value_or(3));
    std::vector<std::string> sentences;
    std::string cur;
    for (char c : doc) {
      cur.push_back(c);
      if (c == '.' || c == '?' || c == '!') {
        const auto first = cur.find_first_not_of(" \n\t");
        if (first != std::string::npos) sentences.push_back(cur.substr(first));
        cur.clear();
      }
    }
    if (const auto first = cur.find_first_not_of(" \n\t"); first != std::string::npos) {
      sentences.push_back(cur.substr(first));
    }
    std::string out;
    for (int k = 0; k < count && k < static_cast<int>(sentences.size()); ++k) {
      const auto& s = sentences[static_cast<std::size_t>(k)];
      auto words = content_words(s);
      std::string topic;
      for (std::size_t w = 0; w < words.size() && w < 3; ++w) topic += (w ? " " : "") + words[w];
      if (topic.empty()) topic = "this passage";
      out += "Q: What does the source report about " + topic + "?\nA: " + s + "\n\n";
    }
    return MockReply::ok(out);
  };
}

ChatResponder mock_judge_responder() {
  return [](const MockChatCall& call) {
    const std::uint64_t h = fnv1a64(call.last_user_content());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "Score: %.1f", 3.0 + static_cast<double>(h % 21) / 10.0);
    return MockReply::ok(buf);
  };
}

}  // namespace privq
