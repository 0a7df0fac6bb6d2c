#include "privq/privacyeval.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "privq/error.hpp"
#include "privq/rng.hpp"

namespace privq {

CandidatePool build_pool(const std::string& true_segment, std::span<const std::string> corpus,
                         const PoolOptions& options, std::uint64_t seed, std::string instance_id) {
  if (options.size < 2) {
    throw Error(ErrorCode::kInvalidArgument, "pool size must be >= 2");
  }
  std::vector<const std::string*> eligible;
  for (const auto& c : corpus) {
    if (c == true_segment) continue;
    if (rouge_l(c, true_segment).f1 < options.decoy_threshold) eligible.push_back(&c);
  }
  const auto need = static_cast<std::size_t>(options.size - 1);
  if (eligible.size() < need) {
    throw Error(ErrorCode::kInsufficientDecoys,
                "need " + std::to_string(need) + " decoys, corpus has " +
                    std::to_string(eligible.size()) + " eligible");
  }

  std::mt19937_64 rng(seed);
  CandidatePool pool;
  pool.instance_id = std::move(instance_id);
  pool.true_segment = true_segment;
  for (auto i : sample_without_replacement(eligible.size(), need, rng)) {
    pool.decoys.push_back(*eligible[i]);
  }
  pool.true_position = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(options.size)));
  pool.candidates = pool.decoys;
  pool.candidates.insert(pool.candidates.begin() + pool.true_position, true_segment);
  return pool;
}

void rank_by_scores(CandidatePool& pool, std::span<const double> scores) {
  if (scores.size() != pool.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one score per candidate is required");
  }
  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  pool.ranking = order;
  const auto it = std::find(order.begin(), order.end(), pool.true_position);
  pool.true_rank = static_cast<int>(it - order.begin()) + 1;
}

CandidatePool rank_candidates(LlmClient& client, const Observation& observed, CandidatePool pool,
                              const EndpointSpec& attacker, const SimBackend& backend,
                              const AttackOptions& attack) {
  if (pool.ranked()) throw Error(ErrorCode::kInvalidArgument, "pool is already ranked");
  const std::string guess = std::visit(
      [&](const auto& obs) -> std::string {
        using T = std::decay_t<decltype(obs)>;
        if constexpr (std::is_same_v<T, SubQueryGroup>) {
          return reconstruct(client, obs, attacker, attack);
        } else {
          return reconstruct_text(client, obs, attacker, attack);
        }
      },
      observed);
  std::vector<double> scores;
  scores.reserve(pool.size());
  for (const auto& c : pool.candidates) scores.push_back(sim(guess, c, backend, &client));
  rank_by_scores(pool, scores);
  return pool;
}

namespace {

void require_ranked(std::span<const CandidatePool> pools) {
  for (const auto& p : pools) {
    if (!p.ranked()) {
      throw Error(ErrorCode::kUnrankedPool, "pool '" + p.instance_id + "' has no ranking");
    }
  }
}

}  // namespace

double asr_at_k(std::span<const CandidatePool> pools, int k) {
  require_ranked(pools);
  if (pools.empty()) throw Error(ErrorCode::kInvalidArgument, "no pools to score");
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  std::size_t hits = 0;
  for (const auto& p : pools) hits += *p.true_rank <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pools.size());
}

double mrr(std::span<const CandidatePool> pools) {
  require_ranked(pools);
  if (pools.empty()) throw Error(ErrorCode::kInvalidArgument, "no pools to score");
  double sum = 0.0;
  for (const auto& p : pools) sum += 1.0 / static_cast<double>(*p.true_rank);
  return sum / static_cast<double>(pools.size());
}

EvalReport make_report(std::span<const CandidatePool> pools, std::string method,
                       std::span<const int> k_list, std::uint64_t seed, std::string config_digest) {
  EvalReport r;
  r.method = std::move(method);
  r.M = static_cast<int>(pools.size());
  r.N = pools.empty() ? 0 : static_cast<int>(pools.front().size());
  std::vector<int> ks{1, 3};
  ks.insert(ks.end(), k_list.begin(), k_list.end());
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  for (int k : ks) r.asr.emplace_back(k, asr_at_k(pools, k));
  r.mrr = mrr(pools);
  r.seed = seed;
  r.config_digest = std::move(config_digest);
  return r;
}

Json report_json(const EvalReport& report) {
  Json j{{"method", report.method}, {"M", report.M}, {"N", report.N}};
  for (const auto& [k, v] : report.asr) j["asr@" + std::to_string(k)] = v;
  j["mrr"] = report.mrr;
  j["seed"] = report.seed;
  j["config_digest"] = report.config_digest;
  return j;
}

}  // namespace privq
