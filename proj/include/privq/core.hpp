#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace privq {

using Json = nlohmann::json;

enum class DomainTag { kBiomedical, kLegal, kOther };

/// Private user query plus an optional reference answer used for training.
struct SensitiveQuery {
  std::string id;
  std::string text;
  DomainTag domain_tag = DomainTag::kOther;
  std::optional<std::string> reference_answer;

  bool operator==(const SensitiveQuery&) const = default;
};

struct SubQuery {
  int index = 0;
  std::string text;

  bool operator==(const SubQuery&) const = default;
};

struct DecodingParams {
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 512;

  /// Throws Error(kInvalidArgument) when out of range.
  void validate() const;

  bool operator==(const DecodingParams&) const = default;
};

/// Greedy decoding used wherever a stable, reproducible completion is needed.
inline DecodingParams greedy(int max_tokens) { return {0.0, 1.0, max_tokens}; }

/// One candidate decomposition of a query.
struct SubQueryGroup {
  std::string query_id;
  int candidate_index = 0;
  std::vector<SubQuery> subqueries;
  int round = 0;
  DecodingParams decoding;

  bool operator==(const SubQueryGroup&) const = default;
};

struct ExternalResponse {
  int subquery_index = 0;
  std::string text;
  std::string endpoint_id;
  std::int64_t latency_ms = 0;
  bool cached = false;

  bool operator==(const ExternalResponse&) const = default;
};

struct RewardRecord {
  std::string query_id;
  int round = 0;
  int candidate_index = 0;
  double quality = 0.0;
  double leakage = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double reward = 0.0;
  std::string integrated_answer;
  std::string reconstructed_query;

  bool operator==(const RewardRecord&) const = default;
};

/// One line of the DPO dataset.
struct PreferencePair {
  std::string query_id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;
  int round = 0;

  bool operator==(const PreferencePair&) const = default;
};

/// One line of the attacker SFT dataset.
struct ReconstructionSample {
  std::string input;
  std::string target;
  std::string query_id;
  int candidate_index = 0;
  int round = 0;

  bool operator==(const ReconstructionSample&) const = default;
};

/// True segment plus decoys. `candidates` is the pool order; `ranking` holds
/// indices into `candidates`, best first, and is empty until ranked.
struct CandidatePool {
  std::string instance_id;
  std::string true_segment;
  std::vector<std::string> candidates;
  std::vector<std::string> decoys;
  int true_position = 0;
  std::vector<int> ranking;
  std::optional<int> true_rank;

  std::size_t size() const { return candidates.size(); }
  bool ranked() const { return true_rank.has_value(); }
  /// Checks membership, permutation and rank consistency.
  bool valid() const;

  bool operator==(const CandidatePool&) const = default;
};

struct RoundCounts {
  int queries = 0;
  int queries_failed = 0;
  int pairs_emitted = 0;
  int pairs_skipped = 0;
  int candidates_dropped = 0;

  bool operator==(const RoundCounts&) const = default;
};

struct RoundArtifacts {
  int round = 0;
  std::string sft_dataset_path;
  std::string dpo_dataset_path;
  std::string reward_log_path;
  RoundCounts counts;

  bool operator==(const RoundArtifacts&) const = default;
};

struct RunManifest {
  std::string run_id;
  int round = 0;  // next round to execute; equals T once complete
  Json config_snapshot;
  std::string config_digest;
  std::map<std::string, std::string> artifact_paths;
  std::map<std::string, std::string> timestamps;
  std::vector<RoundArtifacts> rounds;

  bool operator==(const RunManifest&) const = default;
};

/// True iff the group has exactly n nonempty sub-queries indexed 0..n-1.
bool validate_group(const SubQueryGroup& group, int n);

/// Alpha*quality - beta*leakage.
double compute_reward(double quality, double leakage, double alpha, double beta);

double clamp_unit(double x);

std::string to_string(DomainTag tag);
DomainTag domain_tag_from_string(const std::string& s);

void to_json(Json& j, const SensitiveQuery& v);
void from_json(const Json& j, SensitiveQuery& v);
void to_json(Json& j, const SubQuery& v);
void from_json(const Json& j, SubQuery& v);
void to_json(Json& j, const DecodingParams& v);
void from_json(const Json& j, DecodingParams& v);
void to_json(Json& j, const SubQueryGroup& v);
void from_json(const Json& j, SubQueryGroup& v);
void to_json(Json& j, const ExternalResponse& v);
void from_json(const Json& j, ExternalResponse& v);
void to_json(Json& j, const RewardRecord& v);
void from_json(const Json& j, RewardRecord& v);
void to_json(Json& j, const PreferencePair& v);
void from_json(const Json& j, PreferencePair& v);
void to_json(Json& j, const ReconstructionSample& v);
void from_json(const Json& j, ReconstructionSample& v);
void to_json(Json& j, const CandidatePool& v);
void from_json(const Json& j, CandidatePool& v);
void to_json(Json& j, const RoundCounts& v);
void from_json(const Json& j, RoundCounts& v);
void to_json(Json& j, const RoundArtifacts& v);
void from_json(const Json& j, RoundArtifacts& v);
void to_json(Json& j, const RunManifest& v);
void from_json(const Json& j, RunManifest& v);

}  // namespace privq
