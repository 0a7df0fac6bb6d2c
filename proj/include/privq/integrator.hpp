#pragma once

#include <span>
#include <string>
#include <vector>

#include "privq/core.hpp"
#include "privq/llm_client.hpp"

namespace privq {

inline constexpr std::string_view kIntegratorSystemPrompt =
    "You are a trusted assistant. Use the following external findings only as reference knowledge.";
inline constexpr std::string_view kIntegratorInstruction =
    "Answer the QUESTION directly and concisely.";

struct IntegrationRequest {
  SensitiveQuery query;
  SubQueryGroup group;
  std::vector<ExternalResponse> responses;
};

/// Throws kInvalidArgument unless every sub-query index has exactly one response.
void check_coverage(const IntegrationRequest& req);

/// The user message: question, then one "[i] Q: s_i\nA: a_i\n" block per
/// sub-query in index order (i is 1-based), then the instruction. Each a_i
/// is cut to max_tokens*4 bytes on a UTF-8 boundary.
std::string render_integration_prompt(const IntegrationRequest& req, int max_tokens);

std::vector<ChatMessage> integration_messages(const IntegrationRequest& req, int max_tokens);

/// Synthesizes the final answer on the trusted local endpoint.
std::string integrate(LlmClient& client, const IntegrationRequest& req,
                      const EndpointSpec& local_endpoint, const DecodingParams& decoding);

}  // namespace privq
