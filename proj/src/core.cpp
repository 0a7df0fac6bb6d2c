#include "privq/core.hpp"

#include <algorithm>
#include <cmath>

#include "privq/error.hpp"

namespace privq {

void DecodingParams::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "top_p must be in (0, 1]");
  }
  if (max_tokens <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "max_tokens must be > 0");
  }
}

bool validate_group(const SubQueryGroup& group, int n) {
  if (n < 1 || group.subqueries.size() != static_cast<std::size_t>(n)) return false;
  for (int i = 0; i < n; ++i) {
    const auto& sq = group.subqueries[static_cast<std::size_t>(i)];
    if (sq.index != i || sq.text.empty()) return false;
  }
  return true;
}

double compute_reward(double quality, double leakage, double alpha, double beta) {
  return alpha * quality - beta * leakage;
}

double clamp_unit(double x) {
  if (std::isnan(x)) return 0.0;
  return std::clamp(x, 0.0, 1.0);
}

bool CandidatePool::valid() const {
  const auto n = static_cast<int>(candidates.size());
  if (n < 1 || true_position < 0 || true_position >= n) return false;
  if (candidates[static_cast<std::size_t>(true_position)] != true_segment) return false;
  if (std::count(candidates.begin(), candidates.end(), true_segment) != 1) return false;
  if (decoys.size() + 1 != candidates.size()) return false;
  if (!true_rank) return ranking.empty();
  if (static_cast<int>(ranking.size()) != n) return false;
  std::vector<int> sorted = ranking;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < n; ++i) {
    if (sorted[static_cast<std::size_t>(i)] != i) return false;
  }
  if (*true_rank < 1 || *true_rank > n) return false;
  return ranking[static_cast<std::size_t>(*true_rank - 1)] == true_position;
}

std::string to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::kBiomedical: return "biomedical";
    case DomainTag::kLegal: return "legal";
    case DomainTag::kOther: return "other";
  }
  return "other";
}

DomainTag domain_tag_from_string(const std::string& s) {
  if (s == "biomedical") return DomainTag::kBiomedical;
  if (s == "legal") return DomainTag::kLegal;
  if (s == "other") return DomainTag::kOther;
  throw Error(ErrorCode::kInvalidArgument, "unknown domain_tag '" + s + "'");
}

// ---------------------------------------------------------------------------
// JSON

void to_json(Json& j, const SensitiveQuery& v) {
  j = Json{{"id", v.id}, {"text", v.text}, {"domain_tag", to_string(v.domain_tag)}};
  if (v.reference_answer) j["reference_answer"] = *v.reference_answer;
}

void from_json(const Json& j, SensitiveQuery& v) {
  j.at("id").get_to(v.id);
  j.at("text").get_to(v.text);
  v.domain_tag = domain_tag_from_string(j.value("domain_tag", std::string("other")));
  if (auto it = j.find("reference_answer"); it != j.end() && !it->is_null()) {
    v.reference_answer = it->get<std::string>();
  } else {
    v.reference_answer.reset();
  }
}

void to_json(Json& j, const SubQuery& v) { j = Json{{"index", v.index}, {"text", v.text}}; }

void from_json(const Json& j, SubQuery& v) {
  j.at("index").get_to(v.index);
  j.at("text").get_to(v.text);
}

void to_json(Json& j, const DecodingParams& v) {
  j = Json{{"temperature", v.temperature}, {"top_p", v.top_p}, {"max_tokens", v.max_tokens}};
}

void from_json(const Json& j, DecodingParams& v) {
  DecodingParams d;
  v.temperature = j.value("temperature", d.temperature);
  v.top_p = j.value("top_p", d.top_p);
  v.max_tokens = j.value("max_tokens", d.max_tokens);
}

void to_json(Json& j, const SubQueryGroup& v) {
  j = Json{{"query_id", v.query_id},
           {"candidate_index", v.candidate_index},
           {"subqueries", v.subqueries},
           {"round", v.round},
           {"decoding", v.decoding}};
}

void from_json(const Json& j, SubQueryGroup& v) {
  j.at("query_id").get_to(v.query_id);
  j.at("candidate_index").get_to(v.candidate_index);
  j.at("subqueries").get_to(v.subqueries);
  j.at("round").get_to(v.round);
  j.at("decoding").get_to(v.decoding);
}

void to_json(Json& j, const ExternalResponse& v) {
  j = Json{{"subquery_index", v.subquery_index},
           {"text", v.text},
           {"endpoint_id", v.endpoint_id},
           {"latency_ms", v.latency_ms},
           {"cached", v.cached}};
}

void from_json(const Json& j, ExternalResponse& v) {
  j.at("subquery_index").get_to(v.subquery_index);
  j.at("text").get_to(v.text);
  j.at("endpoint_id").get_to(v.endpoint_id);
  j.at("latency_ms").get_to(v.latency_ms);
  j.at("cached").get_to(v.cached);
}

void to_json(Json& j, const RewardRecord& v) {
  j = Json{{"query_id", v.query_id},
           {"round", v.round},
           {"candidate_index", v.candidate_index},
           {"quality", v.quality},
           {"leakage", v.leakage},
           {"alpha", v.alpha},
           {"beta", v.beta},
           {"reward", v.reward},
           {"integrated_answer", v.integrated_answer},
           {"reconstructed_query", v.reconstructed_query}};
}

void from_json(const Json& j, RewardRecord& v) {
  j.at("query_id").get_to(v.query_id);
  j.at("round").get_to(v.round);
  j.at("candidate_index").get_to(v.candidate_index);
  j.at("quality").get_to(v.quality);
  j.at("leakage").get_to(v.leakage);
  j.at("alpha").get_to(v.alpha);
  j.at("beta").get_to(v.beta);
  j.at("reward").get_to(v.reward);
  j.at("integrated_answer").get_to(v.integrated_answer);
  j.at("reconstructed_query").get_to(v.reconstructed_query);
}

void to_json(Json& j, const PreferencePair& v) {
  j = Json{{"prompt", v.prompt},
           {"chosen", v.chosen},
           {"rejected", v.rejected},
           {"chosen_reward", v.chosen_reward},
           {"rejected_reward", v.rejected_reward},
           {"query_id", v.query_id},
           {"round", v.round}};
}

void from_json(const Json& j, PreferencePair& v) {
  j.at("prompt").get_to(v.prompt);
  j.at("chosen").get_to(v.chosen);
  j.at("rejected").get_to(v.rejected);
  j.at("chosen_reward").get_to(v.chosen_reward);
  j.at("rejected_reward").get_to(v.rejected_reward);
  j.at("query_id").get_to(v.query_id);
  j.at("round").get_to(v.round);
}

void to_json(Json& j, const ReconstructionSample& v) {
  j = Json{{"input", v.input},
           {"target", v.target},
           {"query_id", v.query_id},
           {"candidate_index", v.candidate_index},
           {"round", v.round}};
}

void from_json(const Json& j, ReconstructionSample& v) {
  j.at("input").get_to(v.input);
  j.at("target").get_to(v.target);
  j.at("query_id").get_to(v.query_id);
  j.at("candidate_index").get_to(v.candidate_index);
  j.at("round").get_to(v.round);
}

void to_json(Json& j, const CandidatePool& v) {
  j = Json{{"instance_id", v.instance_id},
           {"true_segment", v.true_segment},
           {"candidates", v.candidates},
           {"decoys", v.decoys},
           {"true_position", v.true_position},
           {"ranking", v.ranking},
           {"true_rank", v.true_rank ? Json(*v.true_rank) : Json(nullptr)}};
}

void from_json(const Json& j, CandidatePool& v) {
  j.at("instance_id").get_to(v.instance_id);
  j.at("true_segment").get_to(v.true_segment);
  j.at("candidates").get_to(v.candidates);
  j.at("decoys").get_to(v.decoys);
  j.at("true_position").get_to(v.true_position);
  j.at("ranking").get_to(v.ranking);
  if (auto it = j.find("true_rank"); it != j.end() && !it->is_null()) {
    v.true_rank = it->get<int>();
  } else {
    v.true_rank.reset();
  }
}

void to_json(Json& j, const RoundCounts& v) {
  j = Json{{"queries", v.queries},
           {"queries_failed", v.queries_failed},
           {"pairs_emitted", v.pairs_emitted},
           {"pairs_skipped", v.pairs_skipped},
           {"candidates_dropped", v.candidates_dropped}};
}

void from_json(const Json& j, RoundCounts& v) {
  j.at("queries").get_to(v.queries);
  v.queries_failed = j.value("queries_failed", 0);
  j.at("pairs_emitted").get_to(v.pairs_emitted);
  j.at("pairs_skipped").get_to(v.pairs_skipped);
  j.at("candidates_dropped").get_to(v.candidates_dropped);
}

void to_json(Json& j, const RoundArtifacts& v) {
  j = Json{{"round", v.round},
           {"sft_dataset_path", v.sft_dataset_path},
           {"dpo_dataset_path", v.dpo_dataset_path},
           {"reward_log_path", v.reward_log_path},
           {"counts", v.counts}};
}

void from_json(const Json& j, RoundArtifacts& v) {
  j.at("round").get_to(v.round);
  j.at("sft_dataset_path").get_to(v.sft_dataset_path);
  j.at("dpo_dataset_path").get_to(v.dpo_dataset_path);
  j.at("reward_log_path").get_to(v.reward_log_path);
  j.at("counts").get_to(v.counts);
}

void to_json(Json& j, const RunManifest& v) {
  j = Json{{"run_id", v.run_id},
           {"round", v.round},
           {"config_snapshot", v.config_snapshot},
           {"config_digest", v.config_digest},
           {"artifact_paths", v.artifact_paths},
           {"timestamps", v.timestamps},
           {"rounds", v.rounds}};
}

void from_json(const Json& j, RunManifest& v) {
  j.at("run_id").get_to(v.run_id);
  j.at("round").get_to(v.round);
  v.config_snapshot = j.at("config_snapshot");
  j.at("config_digest").get_to(v.config_digest);
  j.at("artifact_paths").get_to(v.artifact_paths);
  j.at("timestamps").get_to(v.timestamps);
  j.at("rounds").get_to(v.rounds);
}

}  // namespace privq
