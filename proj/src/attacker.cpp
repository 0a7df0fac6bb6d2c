#include "privq/attacker.hpp"

#include "privq/error.hpp"

namespace privq {

std::string serialize_group(const SubQueryGroup& group) {
  std::string out(kAttackerHeader);
  for (std::size_t i = 0; i < group.subqueries.size(); ++i) {
    out += '\n';
    out += std::to_string(i + 1);
    out += ". ";
    out += group.subqueries[i].text;
  }
  return out;
}

std::vector<ChatMessage> reconstruction_messages(const std::string& observed) {
  return {{Role::kSystem, std::string(kAttackerInstruction)}, {Role::kUser, observed}};
}

std::string reconstruct_text(LlmClient& client, const std::string& observed,
                             const EndpointSpec& attacker, const AttackOptions& options,
                             std::span<const std::string> forbidden) {
  ChatRequest req;
  req.messages = reconstruction_messages(observed);
  req.decoding = greedy(options.max_tokens);
  req.cache_salt = options.checkpoint_digest;
  return client.chat(attacker, req, forbidden).text;
}

std::string reconstruct(LlmClient& client, const SubQueryGroup& group, const EndpointSpec& attacker,
                        const AttackOptions& options, std::span<const std::string> forbidden) {
  return reconstruct_text(client, serialize_group(group), attacker, options, forbidden);
}

std::vector<ReconstructionSample> emit_sft_samples(
    std::span<const SubQueryGroup> groups, const std::map<std::string, SensitiveQuery>& queries) {
  std::vector<ReconstructionSample> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    auto it = queries.find(g.query_id);
    if (it == queries.end()) {
      throw Error(ErrorCode::kUnresolvedQueryId, "no query with id '" + g.query_id + "'");
    }
    out.push_back({serialize_group(g), it->second.text, g.query_id, g.candidate_index, g.round});
  }
  return out;
}

}  // namespace privq
