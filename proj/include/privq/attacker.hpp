#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "privq/core.hpp"
#include "privq/llm_client.hpp"

namespace privq {

inline constexpr std::string_view kAttackerHeader = "Observed sub-queries:";
inline constexpr std::string_view kAttackerInstruction =
    "Infer the single original question that produced these sub-queries.";

/// "Observed sub-queries:\n1. <s_1>\n...\nn. <s_n>" (no trailing newline).
std::string serialize_group(const SubQueryGroup& group);

/// Chat messages for one reconstruction: the fixed instruction as the system
/// message and the serialized observation as the user message.
std::vector<ChatMessage> reconstruction_messages(const std::string& observed);

struct AttackOptions {
  int max_tokens = 512;
  // Served checkpoint digest; keeps cached answers from one checkpoint from
  // being reused for another.
  std::string checkpoint_digest;
};

/// Reconstructs the query from sub-queries only, with greedy decoding.
std::string reconstruct(LlmClient& client, const SubQueryGroup& group, const EndpointSpec& attacker,
                        const AttackOptions& options = {},
                        std::span<const std::string> forbidden = {});

/// Same, for an arbitrary observed text (e.g. a rewritten query).
std::string reconstruct_text(LlmClient& client, const std::string& observed,
                             const EndpointSpec& attacker, const AttackOptions& options = {},
                             std::span<const std::string> forbidden = {});

/// One SFT sample per group, in group order.
std::vector<ReconstructionSample> emit_sft_samples(
    std::span<const SubQueryGroup> groups, const std::map<std::string, SensitiveQuery>& queries);

}  // namespace privq
