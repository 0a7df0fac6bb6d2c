#include <doctest.h>

#include <atomic>
#include <random>
#include <set>
#include <thread>

#include "game_fixture.hpp"
#include "privq/digest.hpp"
#include "privq/error.hpp"
#include "privq/jsonl.hpp"
#include "privq/textmetrics.hpp"

using namespace privq;
using namespace privq::testing;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("privq_game_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RewardRecord rec(int k, double reward, double leakage = 0.5) {
  RewardRecord r;
  r.query_id = "q";
  r.candidate_index = k;
  r.reward = reward;
  r.leakage = leakage;
  return r;
}

std::vector<SubQueryGroup> groups_for(std::size_t count) {
  std::vector<SubQueryGroup> out;
  for (std::size_t k = 0; k < count; ++k) {
    SubQueryGroup g;
    g.query_id = "q";
    g.candidate_index = static_cast<int>(k);
    g.subqueries = {{0, "sub " + std::to_string(k)}};
    out.push_back(g);
  }
  return out;
}

std::size_t count_lines(const fs::path& p) { return read_jsonl(p).size(); }

}  // namespace

TEST_CASE("parse_numbered_list") {
  CHECK(parse_numbered_list("1. a\n2. b\n3. c", 3) == std::vector<std::string>{"a", "b", "c"});
  CHECK(parse_numbered_list("Sure, here they are:\n\n1. a\n\n2. b\n3. c\nHope this helps.", 3) ==
        std::vector<std::string>{"a", "b", "c"});
  CHECK_FALSE(parse_numbered_list("1. a\n2. b", 3));
  CHECK_FALSE(parse_numbered_list("1. a\n2. b\n3. c\n4. d", 3));
  CHECK_FALSE(parse_numbered_list("1. a\n3. b\n4. c", 3));
  CHECK_FALSE(parse_numbered_list("1. a\n2. \n3. c", 3));
  CHECK_FALSE(parse_numbered_list("", 1));

  SubQueryGroup g;
  g.subqueries = {{0, "x"}, {1, "y"}};
  CHECK(format_numbered_list(g) == "1. x\n2. y");
  CHECK(parse_numbered_list(format_numbered_list(g), 2) == std::vector<std::string>{"x", "y"});
}

TEST_CASE("generation prompt names n and the question") {
  const auto q = sample_queries()[0];
  const auto p = render_generation_prompt(q, 9);
  CHECK(p.find("exactly 9") != std::string::npos);
  CHECK(p.find(q.text) != std::string::npos);
  CHECK(render_reprompt(9).find("exactly 9") != std::string::npos);
}

TEST_CASE("sample_candidates yields K valid groups") {
  MockWorld w;
  auto ctx = w.context(small_config());
  const auto q = sample_queries()[0];
  const auto groups = sample_candidates(ctx, q, 0);
  REQUIRE(groups.size() == 4);
  for (int k = 0; k < 4; ++k) {
    CHECK(groups[k].candidate_index == k);
    CHECK(groups[k].query_id == q.id);
    CHECK(validate_group(groups[k], 9));
  }
  // Each candidate carries its own sampling seed on the wire.
  std::set<std::uint64_t> seeds;
  for (const auto& c : w.backend->captured_for("gen")) seeds.insert(Json::parse(c.body)["seed"].get<std::uint64_t>());
  CHECK(seeds.size() == 4);
}

TEST_CASE("generator gets one reprompt after a wrong item count") {
  MockWorld w;
  std::atomic<int> calls{0};
  std::vector<std::string> nine;
  for (int i = 0; i < 9; ++i) nine.push_back("general item " + std::to_string(i));
  std::vector<std::string> seven(nine.begin(), nine.begin() + 7);
  w.backend->set_chat_responder("gen", [&](const MockChatCall& c) {
    return MockReply::ok(calls++ == 0 || c.messages.size() < 3 ? numbered(seven) : numbered(nine));
  });
  auto ctx = w.context(small_config());
  const auto g = generate_group(ctx, sample_queries()[0], 0, 0);
  CHECK(calls == 2);
  CHECK(validate_group(g, 9));
  const Json second = Json::parse(w.backend->captured_for("gen").at(1).body);
  REQUIRE(second["messages"].size() == 3);
  CHECK(second["messages"][1]["role"] == "assistant");
  CHECK(second["messages"][2]["content"] == render_reprompt(9));

  w.backend->set_chat_responder("gen", [&](const MockChatCall&) { return MockReply::ok(numbered(seven)); });
  try {
    generate_group(ctx, sample_queries()[1], 0, 0);
    FAIL("expected ParseFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParseFailure);
  }
}

TEST_CASE("sampling preconditions") {
  MockWorld w;
  auto ctx = w.context(small_config());
  ctx.endpoints.generator.trust = Trust::kUntrusted;
  CHECK_THROWS_AS(sample_candidates(ctx, sample_queries()[0], 0), Error);
  try {
    sample_candidates(ctx, sample_queries()[0], 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTrustViolation);
  }
  ctx.endpoints.generator.trust = Trust::kTrusted;
  ctx.decoding.temperature = 0.0;
  CHECK_THROWS_AS(sample_candidates(ctx, sample_queries()[0], 0), Error);
  CHECK(w.backend->request_count() == 0);
}

TEST_CASE("evaluate_candidate produces a consistent reward record") {
  MockWorld w;
  auto ctx = w.context(small_config());
  const auto q = sample_queries()[0];
  const auto groups = sample_candidates(ctx, q, 0);
  const auto r = evaluate_candidate(ctx, q, groups[1]);
  CHECK(r.query_id == q.id);
  CHECK(r.candidate_index == 1);
  CHECK(r.quality >= 0.0);
  CHECK(r.quality <= 1.0);
  CHECK(r.leakage >= 0.0);
  CHECK(r.leakage <= 1.0);
  CHECK(std::abs(r.reward - compute_reward(r.quality, r.leakage, r.alpha, r.beta)) <= 1e-9);
  CHECK(r.alpha == ctx.cfg.alpha);
  // Repeated sub-query texts are answered once.
  std::set<std::string> distinct;
  for (const auto& s : groups[1].subqueries) distinct.insert(s.text);
  CHECK(w.backend->captured_for("ext").size() == distinct.size());

  auto no_ref = q;
  no_ref.reference_answer.reset();
  try {
    evaluate_candidate(ctx, no_ref, groups[0]);
    FAIL("expected MissingReference");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingReference);
  }
}

TEST_CASE("leakage extremes with a scripted attacker") {
  MockWorld w;
  auto ctx = w.context(small_config());
  const auto q = sample_queries()[0];
  const auto groups = sample_candidates(ctx, q, 0);
  // Distinct checkpoint digests keep the cached reconstructions apart.
  auto ckpt = [](const char* d) {
    AttackOptions a;
    a.checkpoint_digest = d;
    return a;
  };
  w.backend->set_chat_responder("att", [&](const MockChatCall&) { return MockReply::ok(q.text); });
  CHECK(evaluate_candidate(ctx, q, groups[0], ckpt("a")).leakage == 1.0);
  w.backend->set_chat_responder("att", [](const MockChatCall&) { return MockReply::ok("zebra violin orbit"); });
  CHECK(evaluate_candidate(ctx, q, groups[0], ckpt("b")).leakage == 0.0);
  w.backend->set_chat_responder("loc", [&](const MockChatCall&) { return MockReply::ok(*q.reference_answer); });
  ctx.decoding.max_tokens = 256;  // new integration cache key
  const auto best = evaluate_candidate(ctx, q, groups[0], ckpt("c"));
  CHECK(best.quality == 1.0);
  CHECK(best.reward == doctest::Approx(ctx.cfg.alpha).epsilon(1e-12));
}

TEST_CASE("a candidate whose sub-query repeats the query is dropped before sending") {
  MockWorld w;
  const auto q = sample_queries()[0];
  std::vector<std::string> items(9, "general background question");
  items[4] = q.text;
  w.backend->set_chat_responder("gen", [&](const MockChatCall&) { return MockReply::ok(numbered(items)); });
  auto ctx = w.context(small_config());
  const auto g = generate_group(ctx, q, 0, 0);
  try {
    evaluate_candidate(ctx, q, g);
    FAIL("expected CandidateDropped");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCandidateDropped);
  }
  CHECK(w.backend->captured_for("ext").empty());
}

TEST_CASE("build_preference_pair fixtures") {
  GameConfig cfg;
  const auto groups = groups_for(4);
  {
    const std::vector<RewardRecord> r{rec(0, 0.2), rec(1, 0.7), rec(2, 0.5), rec(3, 0.4)};
    const auto p = build_preference_pair(r, groups, cfg, "prompt");
    REQUIRE(p);
    CHECK(p->chosen == "1. sub 1");
    CHECK(p->rejected == "1. sub 0");
    CHECK(p->chosen_reward == 0.7);
    CHECK(p->rejected_reward == 0.2);
    CHECK(p->prompt == "prompt");
  }
  {
    const std::vector<RewardRecord> r{rec(0, 0.4), rec(1, 0.4), rec(2, 0.4), rec(3, 0.4)};
    CHECK_FALSE(build_preference_pair(r, groups, cfg, "p"));
  }
  {
    // Equal top rewards: the lower-leakage candidate is chosen.
    const std::vector<RewardRecord> r{rec(0, 0.7, 0.4), rec(1, 0.7, 0.2), rec(2, 0.1, 0.9)};
    const auto p = build_preference_pair(r, groups, cfg, "p");
    REQUIRE(p);
    CHECK(p->chosen == "1. sub 1");
    CHECK(p->rejected == "1. sub 2");
  }
  {
    const std::vector<RewardRecord> r{rec(0, 0.9)};
    CHECK_FALSE(build_preference_pair(r, groups, cfg, "p"));
    GameConfig strict = cfg;
    strict.min_surviving_candidates = 3;
    const std::vector<RewardRecord> two{rec(0, 0.9), rec(1, 0.1)};
    CHECK_FALSE(build_preference_pair(two, groups, strict, "p"));
    CHECK(build_preference_pair(two, groups, cfg, "p"));
  }
  {
    auto same = groups_for(2);
    same[1].subqueries = same[0].subqueries;
    const std::vector<RewardRecord> r{rec(0, 0.9), rec(1, 0.1)};
    CHECK_FALSE(build_preference_pair(r, same, cfg, "p"));
  }
  {
    const std::vector<RewardRecord> r{rec(0, 0.5 + 5e-7), rec(1, 0.5)};
    CHECK_FALSE(build_preference_pair(r, groups, cfg, "p"));
  }
}

TEST_CASE("preference pairs on random reward sets") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GameConfig cfg;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t K = 2 + rng() % 7;
    std::vector<RewardRecord> r;
    for (std::size_t k = 0; k < K; ++k) {
      // Coarse values make exact ties common.
      r.push_back(rec(static_cast<int>(k), std::round(u(rng) * 4) / 4, std::round((u(rng) + 1) * 2) / 4));
    }
    const auto groups = groups_for(K);
    const auto p = build_preference_pair(r, groups, cfg, "p");
    double mx = -2, mn = 2;
    for (const auto& x : r) {
      mx = std::max(mx, x.reward);
      mn = std::min(mn, x.reward);
    }
    if (mx - mn <= cfg.tie_epsilon) {
      CHECK_FALSE(p);
      continue;
    }
    REQUIRE(p);
    CHECK(p->chosen_reward == mx);
    CHECK(p->rejected_reward == mn);
    CHECK(p->chosen != p->rejected);
  }
}

TEST_CASE("argmax is invariant to positive reward scaling") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<RewardRecord> r;
    for (int k = 0; k < 4; ++k) {
      const double q = u(rng), l = u(rng);
      r.push_back(rec(k, compute_reward(q, l, 2.0 / 3.0, 1.0 / 3.0), l));
      r.back().quality = q;
    }
    const double c = 0.1 + 10 * u(rng);
    auto scaled = r;
    for (auto& x : scaled) x.reward = compute_reward(x.quality, x.leakage, c * 2.0 / 3.0, c * 1.0 / 3.0);
    CHECK(select_extremes(r)->chosen == select_extremes(scaled)->chosen);
    CHECK(select_extremes(r)->rejected == select_extremes(scaled)->rejected);
  }
}

TEST_CASE("run_round writes SFT, rewards and at most one pair per query") {
  MockWorld w;
  EventLog log;
  auto ctx = w.context(small_config(), 3, &log);
  const auto dir = fresh_dir("round");
  write_ready_files(dir, 1, "ckpt-0");
  const auto qs = sample_queries();
  const auto art = run_round(ctx, qs, 0, dir);
  CHECK(count_lines(art.sft_dataset_path) == 8);
  CHECK(count_lines(art.reward_log_path) == 8);
  CHECK(count_lines(art.dpo_dataset_path) <= 2);
  CHECK(art.counts.queries == 2);
  CHECK(art.counts.pairs_emitted + art.counts.pairs_skipped == 2);
  CHECK(art.counts.pairs_emitted == static_cast<int>(count_lines(art.dpo_dataset_path)));
  for (const auto& s : read_jsonl_as<ReconstructionSample>(art.sft_dataset_path)) {
    CHECK(s.input.rfind("Observed sub-queries:\n", 0) == 0);
  }
  for (const auto& r : read_jsonl_as<RewardRecord>(art.reward_log_path)) {
    CHECK(std::abs(r.reward - compute_reward(r.quality, r.leakage, r.alpha, r.beta)) <= 1e-9);
  }
  // Reconstruction requests carry the checkpoint digest as their cache salt,
  // so each candidate is sent to the attacker once.
  CHECK(w.backend->captured_for("att").size() == 8);
  fs::remove_all(dir);
}

TEST_CASE("run_round drops guarded candidates and still pairs the rest") {
  MockWorld w;
  const auto qs = sample_queries();
  const auto q = qs[0];
  auto decomposer = mock_decomposer_responder();
  std::vector<std::string> leaky(9, "general background question");
  leaky[2] = q.text;
  const auto bad_seed = sample_seed(3, q.id, 0, 3);
  w.backend->set_chat_responder("gen", [&](const MockChatCall& c) {
    return c.seed == bad_seed ? MockReply::ok(numbered(leaky)) : decomposer(c);
  });
  auto ctx = w.context(small_config(), 3);
  const auto dir = fresh_dir("dropped");
  write_ready_files(dir, 1, "ckpt-0");
  const auto art = run_round(ctx, std::span(qs.data(), 1), 0, dir);
  CHECK(art.counts.candidates_dropped == 1);
  CHECK(count_lines(art.reward_log_path) == 3);
  CHECK(count_lines(dir / "rounds/0/errors.jsonl") == 1);
  for (const auto& c : w.backend->captured_for("ext")) CHECK(c.body.find(q.text) == std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("run_round waits for the attacker handshake") {
  MockWorld w;
  EventLog log;
  auto cfg = small_config();
  cfg.handshake_timeout = std::chrono::milliseconds(60);
  auto ctx = w.context(cfg, 3, &log);
  const auto dir = fresh_dir("timeout");
  const auto qs = sample_queries();
  try {
    run_round(ctx, qs, 0, dir);
    FAIL("expected AttackerNotUpdated");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kAttackerNotUpdated);
  }
  // The SFT data was published before waiting; no reward was computed.
  CHECK(count_lines(dir / "rounds/0/sft.jsonl") == 8);
  for (const auto& e : log.events()) CHECK(e.kind != kEventRewardComputed);
  CHECK(w.backend->captured_for("att").empty());

  // A handshake written while the round waits releases it.
  ctx.cfg.handshake_timeout = std::chrono::milliseconds(3000);
  std::thread writer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    write_text_atomic(dir / "rounds/0/attacker.ready", "ckpt-late\n");
  });
  const auto art = run_round(ctx, qs, 0, dir);
  writer.join();
  CHECK(count_lines(art.reward_log_path) == 8);
  fs::remove_all(dir);
}

TEST_CASE("health verification requires the served digest to match") {
  MockWorld w;
  auto cfg = small_config();
  cfg.verify_attacker_health = true;
  cfg.handshake_timeout = std::chrono::milliseconds(50);
  auto ctx = w.context(cfg);
  const auto dir = fresh_dir("health");
  write_text_atomic(dir / "attacker.ready", "ckpt-a\n");
  w.backend->set_health_digest("att", "ckpt-old");
  CHECK_THROWS_AS(wait_for_attacker(ctx, dir / "attacker.ready"), Error);
  w.backend->set_health_digest("att", "ckpt-a");
  CHECK(wait_for_attacker(ctx, dir / "attacker.ready") == "ckpt-a");
  fs::remove_all(dir);
}

TEST_CASE("rounds follow attacker-then-generator ordering") {
  MockWorld w;
  EventLog log;
  auto ctx = w.context(small_config(2), 9, &log);
  const auto dir = fresh_dir("events");
  write_ready_files(dir, 2, "ckpt");
  const auto qs = sample_queries();
  run_training(ctx, qs, dir, {"run", Json{{"seed", 9}}, false});
  const auto events = log.events();
  REQUIRE_FALSE(events.empty());
  for (int t = 0; t < 2; ++t) {
    std::uint64_t sft = 0, ready = 0, first_reward = UINT64_MAX, last_reward = 0;
    int rewards = 0;
    for (const auto& e : events) {
      if (e.round != t) continue;
      if (e.kind == kEventSftFinalized) sft = e.seq;
      if (e.kind == kEventAttackerReady) ready = e.seq;
      if (e.kind == kEventRewardComputed) {
        first_reward = std::min(first_reward, e.seq);
        last_reward = std::max(last_reward, e.seq);
        ++rewards;
      }
    }
    CHECK(sft < ready);
    CHECK(ready < first_reward);
    CHECK(rewards == 8);
    if (t == 1) {
      for (const auto& e : events) {
        if (e.round == 0) CHECK(e.seq < sft);
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("run_training is deterministic and resumable") {
  const auto qs = sample_queries();
  const Json snapshot{{"seed", 17}, {"game", Json(small_config())}};
  auto run = [&](const fs::path& dir) {
    MockWorld w;
    auto ctx = w.context(small_config(2), 17);
    write_ready_files(dir, 2, "ckpt");
    return run_training(ctx, qs, dir, {"run", snapshot, false});
  };
  const auto a = fresh_dir("det_a");
  const auto b = fresh_dir("det_b");
  const auto ma = run(a);
  run(b);
  CHECK(ma.round == 2);
  CHECK(ma.rounds.size() == 2);
  CHECK(ma.config_digest == sha256_hex(snapshot.dump()));
  for (int t = 0; t < 2; ++t) {
    for (const char* f : {"sft.jsonl", "rewards.jsonl", "dpo.jsonl"}) {
      CAPTURE(f);
      CHECK(read_text_file(round_dir(a, t) / f) == read_text_file(round_dir(b, t) / f));
    }
  }

  // An existing run refuses a fresh start; a matching snapshot resumes.
  {
    MockWorld w;
    auto ctx = w.context(small_config(3), 17);
    CHECK_THROWS_AS(run_training(ctx, qs, a, {"run", snapshot, false}), Error);
    write_ready_files(a, 3, "ckpt");
    const auto resumed = run_training(ctx, qs, a, {"run", snapshot, true});
    CHECK(resumed.round == 3);
    CHECK(resumed.rounds.size() == 3);
    // Only the new round ran.
    CHECK(w.backend->captured_for("att").size() == 8);
  }
  {
    MockWorld w;
    auto ctx = w.context(small_config(3), 17);
    Json changed = snapshot;
    changed["game"]["alpha"] = 0.5;
    try {
      run_training(ctx, qs, a, {"run", changed, true});
      FAIL("expected SnapshotMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSnapshotMismatch);
    }
  }
  {
    MockWorld w;
    auto ctx = w.context(small_config(1), 17);
    CHECK_THROWS_AS(run_training(ctx, qs, fresh_dir("no_manifest"), {"run", snapshot, true}), Error);
    auto bad = qs;
    bad[1].reference_answer.reset();
    try {
      run_training(ctx, bad, fresh_dir("no_ref"), {"run", snapshot, false});
      FAIL("expected MissingReference");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kMissingReference);
    }
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("resume after an interrupted round re-runs it from scratch") {
  const auto qs = sample_queries();
  const Json snapshot{{"seed", 4}};
  const auto dir = fresh_dir("interrupted");
  {
    MockWorld w;
    auto cfg = small_config(2);
    cfg.handshake_timeout = std::chrono::milliseconds(30);
    auto ctx = w.context(cfg, 4);
    write_ready_files(dir, 1, "ckpt");  // round 1 never gets its handshake
    CHECK_THROWS_AS(run_training(ctx, qs, dir, {"run", snapshot, false}), Error);
    const auto m = Json::parse(read_text_file(dir / "manifest.json")).get<RunManifest>();
    CHECK(m.round == 1);
  }
  MockWorld w;
  auto ctx = w.context(small_config(2), 4);
  write_ready_files(dir, 2, "ckpt");
  const auto m = run_training(ctx, qs, dir, {"run", snapshot, true});
  CHECK(m.round == 2);
  CHECK(count_lines(round_dir(dir, 1) / "sft.jsonl") == 8);
  fs::remove_all(dir);
}

TEST_CASE("scripted overlap: pairs prefer the lower-leakage candidate") {
  MockWorld w;
  const auto qs = sample_queries();
  const std::uint64_t seed = 23;
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, std::string> refs;
  for (const auto& q : qs) {
    const auto toks = tokenize(q.text);
    for (int overlap : {3, 0, 6, 1}) lists[q.id].push_back(overlap_list(toks, 9, overlap));
    refs[q.text] = *q.reference_answer;
  }
  w.backend->set_chat_responder("gen", scripted_generator(seed, 0, lists, qs));
  // Every candidate integrates to the reference, so quality ties at 1.
  w.backend->set_chat_responder("loc", [&](const MockChatCall& c) {
    for (const auto& [text, ref] : refs) {
      if (c.last_user_content().find(text) != std::string::npos) return MockReply::ok(ref);
    }
    return MockReply::error(500);
  });
  auto ctx = w.context(small_config(1), seed);
  const auto dir = fresh_dir("shaping");
  write_ready_files(dir, 1, "ckpt");
  const auto art = run_round(ctx, qs, 0, dir);
  const auto pairs = read_jsonl_as<PreferencePair>(art.dpo_dataset_path);
  REQUIRE(pairs.size() == 2);
  for (const auto& p : pairs) {
    const auto toks = tokenize(qs[p.query_id == qs[0].id ? 0 : 1].text);
    CHECK(p.chosen + "\n" == overlap_list(toks, 9, 0));
    CHECK(p.rejected + "\n" == overlap_list(toks, 9, 6));
  }
  fs::remove_all(dir);
}
