#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "privq/attacker.hpp"
#include "privq/core.hpp"
#include "privq/llm_client.hpp"
#include "privq/textmetrics.hpp"

namespace privq {

struct GameConfig {
  int K = 4;
  int n = 9;
  double alpha = 2.0 / 3.0;
  double beta = 1.0 / 3.0;
  int T = 5;
  double tie_epsilon = 1e-6;
  int min_surviving_candidates = 2;
  int batch_size = 64;
  int workers = 8;
  std::chrono::milliseconds handshake_timeout{std::chrono::hours(6)};
  std::chrono::milliseconds handshake_poll{std::chrono::seconds(2)};
  // Also require GET <attacker>/health to report the digest in attacker.ready.
  bool verify_attacker_health = false;

  void validate() const;
};

void to_json(Json& j, const GameConfig& v);
void from_json(const Json& j, GameConfig& v);

struct GameEndpoints {
  EndpointSpec generator;
  EndpointSpec external;
  EndpointSpec integrator;
  EndpointSpec attacker;
};

struct Event {
  std::uint64_t seq = 0;
  std::string kind;
  int round = 0;
  std::string query_id;
  int candidate_index = -1;
};

/// Ordered, thread-safe record of phase transitions; round-barrier checks
/// read it back.
class EventLog {
 public:
  void record(std::string kind, int round, std::string query_id = {}, int candidate_index = -1);
  std::vector<Event> events() const;

 private:
  mutable std::mutex mu_;
  std::vector<Event> events_;
};

inline constexpr std::string_view kEventSftFinalized = "sft_finalized";
inline constexpr std::string_view kEventAttackerReady = "attacker_ready";
inline constexpr std::string_view kEventRewardComputed = "reward_computed";

struct GameContext {
  LlmClient& client;
  GameEndpoints endpoints;
  SimBackend sim;
  GameConfig cfg;
  DecodingParams decoding;
  std::uint64_t seed = 0;
  EventLog* events = nullptr;
};

// ---------------------------------------------------------------------------
// Candidate generation

std::string render_generation_prompt(const SensitiveQuery& query, int n);
std::string render_reprompt(int n);

/// First block of exactly n lines "<i>. <text>" with i running 1..n.
/// Surrounding prose and blank lines between items are tolerated.
std::optional<std::vector<std::string>> parse_numbered_list(std::string_view completion, int n);

/// "1. <s_1>\n...\nn. <s_n>", the generator's own output format.
std::string format_numbered_list(const SubQueryGroup& group);

std::uint64_t sample_seed(std::uint64_t run_seed, const std::string& query_id, int round, int k);

/// One sampled group; reprompts once on a parse failure, then throws kParseFailure.
SubQueryGroup generate_group(GameContext& ctx, const SensitiveQuery& query, int candidate_index,
                             int round);

/// K groups for one query; the generator must be trusted.
std::vector<SubQueryGroup> sample_candidates(GameContext& ctx, const SensitiveQuery& query,
                                             int round);

// ---------------------------------------------------------------------------
// Rewards and preferences

/// dispatch -> integrate -> reconstruct -> quality/leakage -> reward.
/// Throws kCandidateDropped when dispatch fails or is blocked by the guard.
RewardRecord evaluate_candidate(GameContext& ctx, const SensitiveQuery& query,
                                const SubQueryGroup& group, const AttackOptions& attack = {});

struct Extremes {
  std::size_t chosen = 0;
  std::size_t rejected = 0;
};

/// Best by (reward desc, leakage asc, candidate_index asc); worst by
/// (reward asc, leakage desc, candidate_index asc). Positions into `records`.
std::optional<Extremes> select_extremes(std::span<const RewardRecord> records);

/// Best-vs-worst pair, or nothing when fewer than min_surviving_candidates
/// records exist, the reward spread is <= tie_epsilon, or both groups render
/// to the same text.
std::optional<PreferencePair> build_preference_pair(std::span<const RewardRecord> records,
                                                    std::span<const SubQueryGroup> groups,
                                                    const GameConfig& cfg,
                                                    const std::string& prompt);

// ---------------------------------------------------------------------------
// Rounds

std::filesystem::path round_dir(const std::filesystem::path& run_dir, int round);

/// Polls `<round_dir>/attacker.ready` until it holds a digest (and, when
/// configured, the attacker's health endpoint reports the same digest).
std::string wait_for_attacker(GameContext& ctx, const std::filesystem::path& ready_file);

/// Attacker-then-generator round: emit sft.jsonl, wait for the updated
/// attacker, then score candidates and emit rewards.jsonl and dpo.jsonl.
RoundArtifacts run_round(GameContext& ctx, std::span<const SensitiveQuery> batch, int round,
                         const std::filesystem::path& run_dir);

struct TrainingOptions {
  std::string run_id;
  Json config_snapshot;
  bool resume = false;
};

/// Seeded per-round batch of at most batch_size queries.
std::vector<SensitiveQuery> sample_batch(std::span<const SensitiveQuery> dataset, int batch_size,
                                         std::uint64_t seed, int round);

/// Runs rounds [manifest.round, T) and persists manifest.json after each.
RunManifest run_training(GameContext& ctx, std::span<const SensitiveQuery> dataset,
                         const std::filesystem::path& run_dir, const TrainingOptions& options);

std::string utc_timestamp();

}  // namespace privq
