#include <doctest.h>

#include <random>
#include <set>

#include "privq/error.hpp"
#include "privq/mock_backend.hpp"
#include "privq/privacyeval.hpp"
#include "rank_fixture.hpp"

using namespace privq;
using privq::testing::pool_with_rank;

namespace {

std::vector<std::string> corpus(int n) {
  static const std::vector<std::string> kWords = {"river", "court", "enzyme", "contract", "tumor",
                                                  "appeal", "kinase", "statute", "lesion", "tenant"};
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    out.push_back("segment " + std::to_string(i) + " about " + kWords[i % kWords.size()] + " and " +
                  kWords[(i * 7 + 3) % kWords.size()]);
  }
  return out;
}

EndpointSpec attacker_endpoint() {
  EndpointSpec ep;
  ep.id = "att";
  ep.base_url = "mock://att";
  ep.model_name = "m";
  ep.requests_per_second = 1e6;
  return ep;
}

}  // namespace

TEST_CASE("build_pool") {
  const auto c = corpus(30);
  const std::string truth = "the true private segment";
  PoolOptions o;
  const auto p = build_pool(truth, c, o, 1, "x");
  CHECK(p.size() == 10);
  CHECK(p.valid());
  CHECK(p.candidates[p.true_position] == truth);
  CHECK(p.decoys.size() == 9);
  CHECK_FALSE(p.ranked());
  CHECK(build_pool(truth, c, o, 1, "x") == p);

  std::set<int> positions;
  for (std::uint64_t s = 0; s < 50; ++s) positions.insert(build_pool(truth, c, o, s).true_position);
  CHECK(positions.size() > 3);

  o.size = 2;
  const auto two = build_pool(truth, c, o, 3);
  CHECK(two.size() == 2);
  CHECK(two.valid());
  o.size = 1;
  CHECK_THROWS_AS(build_pool(truth, c, o, 3), Error);
}

TEST_CASE("build_pool excludes near-duplicates of the true segment") {
  const std::string truth = "tumor kinase inhibitor response in stage two";
  std::vector<std::string> c{truth, "tumor kinase inhibitor response in stage three", "appeal court statute",
                             "river tenant lease", "enzyme lesion study"};
  PoolOptions o;
  o.size = 4;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = build_pool(truth, c, o, s);
    for (const auto& d : p.decoys) {
      CHECK(d != truth);
      CHECK(rouge_l(d, truth).f1 < o.decoy_threshold);
    }
  }
  o.size = 5;
  try {
    build_pool(truth, c, o, 0);
    FAIL("expected InsufficientDecoys");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientDecoys);
  }
}

TEST_CASE("rank_by_scores") {
  CandidatePool p;
  p.candidates = {"a", "t", "b", "c"};
  p.true_segment = "t";
  p.true_position = 1;
  p.decoys = {"a", "b", "c"};
  const std::vector<double> s{0.9, 0.5, 0.3, 0.1};
  rank_by_scores(p, s);
  CHECK(p.ranking == std::vector<int>{0, 1, 2, 3});
  CHECK(p.true_rank == 2);
  CHECK(p.valid());

  CandidatePool tie = p;
  tie.ranking.clear();
  tie.true_rank.reset();
  const std::vector<double> flat(4, 0.0);
  rank_by_scores(tie, flat);
  CHECK(tie.true_rank == 2);  // ties keep pool order
}

TEST_CASE("rank_candidates with scripted attackers") {
  auto backend = std::make_shared<MockBackend>();
  LlmClient client(std::make_shared<MockTransport>(backend));
  const SimBackend rl;
  const auto c = corpus(30);
  const std::string truth = "does the tenant appeal succeed under the housing statute";
  PoolOptions o;
  const auto pool = build_pool(truth, c, o, 7, "i");

  backend->set_chat_responder("att", [&](const MockChatCall&) { return MockReply::ok(truth); });
  auto ranked = rank_candidates(client, std::string("observed text"), pool, attacker_endpoint(), rl);
  CHECK(ranked.true_rank == 1);
  CHECK(ranked.valid());

  backend->set_chat_responder("att", [](const MockChatCall&) { return MockReply::ok("zzz qqq"); });
  AttackOptions other;
  other.checkpoint_digest = "other";
  ranked = rank_candidates(client, std::string("observed text"), pool, attacker_endpoint(), rl, other);
  CHECK(ranked.true_rank == pool.true_position + 1);

  CHECK_THROWS_AS(rank_candidates(client, std::string("x"), ranked, attacker_endpoint(), rl), Error);

  SubQueryGroup g;
  g.query_id = "i";
  g.subqueries = {{0, "housing law question"}};
  backend->set_chat_responder("att", [&](const MockChatCall& call) {
    CHECK(call.last_user_content() == serialize_group(g));
    return MockReply::ok(truth);
  });
  other.checkpoint_digest = "third";
  CHECK(rank_candidates(client, g, pool, attacker_endpoint(), rl, other).true_rank == 1);
}

TEST_CASE("asr and mrr fixtures") {
  std::vector<CandidatePool> pools;
  for (int r : {1, 2, 1, 3}) pools.push_back(pool_with_rank(10, r));
  CHECK(asr_at_k(pools, 1) == 0.5);
  CHECK(asr_at_k(pools, 3) == 1.0);
  std::vector<CandidatePool> three;
  for (int r : {1, 2, 4}) three.push_back(pool_with_rank(10, r));
  CHECK(std::abs(mrr(three) - 7.0 / 12.0) <= 1e-9);

  CandidatePool unranked = pool_with_rank(4, 1);
  unranked.true_rank.reset();
  unranked.ranking.clear();
  std::vector<CandidatePool> bad{pools[0], unranked};
  for (auto f : {+[](std::span<const CandidatePool> p) { return asr_at_k(p, 1); },
                 +[](std::span<const CandidatePool> p) { return mrr(p); }}) {
    try {
      f(bad);
      FAIL("expected UnrankedPool");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kUnrankedPool);
    }
  }
  CHECK_THROWS_AS(asr_at_k(std::span<const CandidatePool>(), 1), Error);
  CHECK_THROWS_AS(asr_at_k(pools, 0), Error);
}

TEST_CASE("asr and mrr properties on random rank lists") {
  std::mt19937_64 rng(44);
  for (int t = 0; t < 500; ++t) {
    const int n = 2 + static_cast<int>(rng() % 9);
    const int m = 1 + static_cast<int>(rng() % 20);
    std::vector<CandidatePool> pools;
    std::vector<int> ranks;
    for (int i = 0; i < m; ++i) {
      const int r = 1 + static_cast<int>(rng() % n);
      ranks.push_back(r);
      pools.push_back(pool_with_rank(n, r, static_cast<int>(rng() % n)));
      REQUIRE(pools.back().true_rank == r);
    }
    double prev = 0.0;
    double rr = 0.0;
    for (int r : ranks) rr += 1.0 / r;
    for (int k = 1; k <= n; ++k) {
      const double a = asr_at_k(pools, k);
      int hits = 0;
      for (int r : ranks) hits += r <= k;
      CHECK(a == static_cast<double>(hits) / m);
      CHECK(a >= prev);
      prev = a;
    }
    CHECK(asr_at_k(pools, n) == 1.0);
    const double v = mrr(pools);
    CHECK(std::abs(v - rr / m) <= 1e-12);
    CHECK(v >= 1.0 / n - 1e-12);
    CHECK(v <= 1.0);
    CHECK(v >= asr_at_k(pools, 1) - 1e-12);
  }
}

TEST_CASE("report json") {
  std::vector<CandidatePool> pools;
  for (int r : {1, 2, 1, 3}) pools.push_back(pool_with_rank(10, r));
  const std::vector<int> ks{5};
  const auto rep = make_report(pools, "decomposition", ks, 42, "abc");
  CHECK(rep.M == 4);
  CHECK(rep.N == 10);
  const Json j = report_json(rep);
  for (const char* key : {"method", "M", "N", "asr@1", "asr@3", "asr@5", "mrr", "seed", "config_digest"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["asr@1"] == 0.5);
  CHECK(j["seed"] == 42);
}
