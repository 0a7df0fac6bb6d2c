#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "privq/attacker.hpp"
#include "privq/core.hpp"
#include "privq/llm_client.hpp"
#include "privq/textmetrics.hpp"

namespace privq {

struct PoolOptions {
  int size = 10;
  // Corpus entries at or above this rouge_l F1 against the true segment are
  // never used as decoys.
  double decoy_threshold = 0.6;
};

/// True segment plus size-1 seeded decoys, true segment at a seeded position.
/// Throws kInsufficientDecoys when the corpus is too small after exclusion.
CandidatePool build_pool(const std::string& true_segment, std::span<const std::string> corpus,
                         const PoolOptions& options, std::uint64_t seed,
                         std::string instance_id = {});

/// Orders pool positions by descending score, ties by position, and sets
/// ranking and true_rank.
void rank_by_scores(CandidatePool& pool, std::span<const double> scores);

using Observation = std::variant<std::string, SubQueryGroup>;

/// One greedy reconstruction of the observation, then sim against every candidate.
CandidatePool rank_candidates(LlmClient& client, const Observation& observed, CandidatePool pool,
                              const EndpointSpec& attacker, const SimBackend& backend,
                              const AttackOptions& attack = {});

/// Fraction of pools whose true candidate ranks within the top k.
double asr_at_k(std::span<const CandidatePool> pools, int k);

/// Mean reciprocal rank of the true candidate.
double mrr(std::span<const CandidatePool> pools);

struct EvalReport {
  std::string method;
  int M = 0;
  int N = 0;
  std::vector<std::pair<int, double>> asr;  // (k, ASR@k)
  double mrr = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
};

/// Always reports asr@1 and asr@3 alongside any extra k.
EvalReport make_report(std::span<const CandidatePool> pools, std::string method,
                       std::span<const int> k_list, std::uint64_t seed, std::string config_digest);

Json report_json(const EvalReport& report);

}  // namespace privq
