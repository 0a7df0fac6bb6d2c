#include "privq/integrator.hpp"

#include <set>

#include "privq/error.hpp"

namespace privq {

namespace {

std::string truncate_utf8(const std::string& s, std::size_t max_bytes) {
  if (s.size() <= max_bytes) return s;
  std::size_t cut = max_bytes;
  // step back over continuation bytes so a code point is never split
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xc0) == 0x80) --cut;
  return s.substr(0, cut);
}

}  // namespace

void check_coverage(const IntegrationRequest& req) {
  std::set<int> expected;
  for (const auto& sq : req.group.subqueries) expected.insert(sq.index);
  std::multiset<int> got;
  for (const auto& r : req.responses) got.insert(r.subquery_index);
  if (got.size() != expected.size() || std::set<int>(got.begin(), got.end()) != expected) {
    throw Error(ErrorCode::kInvalidArgument,
                "responses do not cover every sub-query of group " +
                    std::to_string(req.group.candidate_index) + " exactly once");
  }
}

std::string render_integration_prompt(const IntegrationRequest& req, int max_tokens) {
  check_coverage(req);
  const std::size_t limit = static_cast<std::size_t>(std::max(1, max_tokens)) * 4;
  std::string out = "QUESTION:\n" + req.query.text + "\n\nFINDINGS:\n";
  for (std::size_t i = 0; i < req.group.subqueries.size(); ++i) {
    const SubQuery& sq = req.group.subqueries[i];
    const ExternalResponse* resp = nullptr;
    for (const auto& r : req.responses) {
      if (r.subquery_index == sq.index) resp = &r;
    }
    out += "[" + std::to_string(i + 1) + "] Q: " + sq.text + "\nA: " +
           truncate_utf8(resp->text, limit) + "\n";
  }
  out += "\n";
  out += kIntegratorInstruction;
  return out;
}

std::vector<ChatMessage> integration_messages(const IntegrationRequest& req, int max_tokens) {
  return {{Role::kSystem, std::string(kIntegratorSystemPrompt)},
          {Role::kUser, render_integration_prompt(req, max_tokens)}};
}

std::string integrate(LlmClient& client, const IntegrationRequest& req,
                      const EndpointSpec& local_endpoint, const DecodingParams& decoding) {
  if (!local_endpoint.trusted()) {
    throw Error(ErrorCode::kTrustViolation,
                "integrator endpoint '" + local_endpoint.id + "' is not trusted");
  }
  ChatRequest chat;
  chat.messages = integration_messages(req, decoding.max_tokens);
  chat.decoding = decoding;
  return client.chat(local_endpoint, chat).text;
}

}  // namespace privq
