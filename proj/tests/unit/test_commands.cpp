#include <doctest.h>

#include <functional>
#include <sstream>

#include "privq/commands.hpp"
#include "privq/error.hpp"
#include "privq/jsonl.hpp"

using namespace privq;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("privq_cmd_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CommandContext mock_context(const fs::path& dir, const std::string& run_id, std::ostream& out) {
  CommandContext ctx;
  ctx.config = default_mock_config();
  ctx.config.run_dir = dir / "runs";
  ctx.config.cache_enabled = false;
  ctx.config.seed = 11;
  ctx.mock = true;
  ctx.run_id = run_id;
  ctx.out = &out;
  return ctx;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

void write_queries(const fs::path& path, int n, bool with_reference = true) {
  std::vector<SensitiveQuery> qs;
  const char* topics[] = {"kinase inhibitor dosing in renal failure", "lease termination after flooding",
                          "statin myopathy in elderly women", "patent licensing across borders",
                          "vaccine response in transplant recipients", "custody rights after relocation"};
  for (int i = 0; i < n; ++i) {
    SensitiveQuery q;
    q.id = "q" + std::to_string(i);
    q.text = std::string("Question ") + std::to_string(i) + ": what about " + topics[i % 6] + " for case " +
             std::to_string(100 + i) + "?";
    if (with_reference) q.reference_answer = std::string("It depends on ") + topics[i % 6] + ".";
    qs.push_back(q);
  }
  write_jsonl(path, qs);
}

}  // namespace

TEST_CASE("config validation rejects bad topologies") {
  auto cfg = default_mock_config();
  CHECK_NOTHROW(cfg.validate());

  auto untrusted = cfg;
  for (auto& e : untrusted.endpoints) {
    if (e.role == kRoleGenerator) e.spec.trust = Trust::kUntrusted;
  }
  CHECK(code_of([&] { untrusted.validate(); }) == ErrorCode::kConfigInvalid);

  auto trusted_external = cfg;
  for (auto& e : trusted_external.endpoints) {
    if (e.role == kRoleExternal) e.spec.trust = Trust::kTrusted;
  }
  CHECK(code_of([&] { trusted_external.validate(); }) == ErrorCode::kConfigInvalid);

  auto missing = cfg;
  std::erase_if(missing.endpoints, [](const RoleEndpoint& e) { return e.role == kRoleAttacker; });
  CHECK(code_of([&] { missing.validate(); }) == ErrorCode::kConfigInvalid);

  Json j = cfg.snapshot();
  j["unexpected"] = 1;
  CHECK(code_of([&] { config_from_json(j); }) == ErrorCode::kConfigInvalid);

  auto bad_k = cfg;
  bad_k.game.K = 1;
  CHECK(code_of([&] { bad_k.validate(); }) == ErrorCode::kConfigInvalid);
}

TEST_CASE("the shipped example config validates") {
  const auto cfg = load_config(fs::path(PRIVQ_TEST_DATA_DIR) / "../../config/example.json");
  CHECK(cfg.endpoint(kRoleGenerator).trust == Trust::kTrusted);
  CHECK(cfg.endpoint(kRoleExternal).trust == Trust::kUntrusted);
  CHECK(cfg.game.T == 5);
  CHECK(cfg.sim == SimMode::kEmbeddingCosine);
}

TEST_CASE("config snapshot round-trips and digests are stable") {
  const auto cfg = default_mock_config();
  const auto back = config_from_json(cfg.snapshot());
  CHECK(back.snapshot() == cfg.snapshot());
  CHECK(back.digest() == cfg.digest());
  auto changed = cfg;
  changed.game.alpha = 0.5;
  CHECK(changed.digest() != cfg.digest());
}

TEST_CASE("mock ask keeps the query away from untrusted endpoints") {
  const auto dir = fresh_dir("ask");
  std::ostringstream out;
  auto ctx = mock_context(dir, "ask-1", out);
  const std::string q = "Does IL-6 signaling in patient 42's CD8 T cells drive resistance to pembrolizumab?";
  const auto r = cmd_ask(ctx, q, DomainTag::kBiomedical);
  CHECK_FALSE(r.answer.empty());
  CHECK(out.str().find(r.answer) != std::string::npos);
  const Json report = Json::parse(read_text_file(r.run_path / "ask_report.json"));
  CHECK(report["sub_queries"].size() == 9);
  CHECK(report["responses"].size() == 9);
  CHECK(report["guard_audit"]["untrusted_requests"] == 9);
  CHECK(report["guard_audit"]["untrusted_payloads_containing_query"] == 0);
  CHECK(fs::exists(r.run_path / "manifest.json"));
  CHECK(code_of([&] { cmd_ask(ctx, "   "); }) == ErrorCode::kInvalidArgument);
  fs::remove_all(dir);
}

TEST_CASE("mock train is deterministic and records the config digest") {
  const auto dir = fresh_dir("train");
  write_queries(dir / "train.jsonl", 4);
  std::ostringstream out;
  auto a = mock_context(dir, "run-a", out);
  auto b = mock_context(dir, "run-b", out);
  const auto ma = cmd_train(a, dir / "train.jsonl");
  cmd_train(b, dir / "train.jsonl");
  CHECK(ma.round == a.config.game.T);
  CHECK(ma.config_digest == a.config.digest());
  for (int t = 0; t < a.config.game.T; ++t) {
    for (const char* f : {"sft.jsonl", "rewards.jsonl", "dpo.jsonl"}) {
      CAPTURE(f);
      CHECK(read_text_file(round_dir(dir / "runs/run-a", t) / f) ==
            read_text_file(round_dir(dir / "runs/run-b", t) / f));
    }
  }

  auto again = mock_context(dir, "run-a", out);
  CHECK(code_of([&] { cmd_train(again, dir / "train.jsonl"); }) == ErrorCode::kInvalidArgument);
  again.resume = true;
  again.config.game.alpha = 0.5;
  CHECK(code_of([&] { cmd_train(again, dir / "train.jsonl"); }) == ErrorCode::kSnapshotMismatch);

  write_queries(dir / "noref.jsonl", 2, false);
  auto c = mock_context(dir, "run-c", out);
  CHECK(code_of([&] { cmd_train(c, dir / "noref.jsonl"); }) == ErrorCode::kMissingReference);
  CHECK(code_of([&] { cmd_train(c, dir / "missing.jsonl"); }) == ErrorCode::kInvalidArgument);
  fs::remove_all(dir);
}

TEST_CASE("attack-eval writes a report with every key") {
  const auto dir = fresh_dir("eval");
  write_queries(dir / "eval.jsonl", 6, false);
  std::ostringstream out;
  auto ctx = mock_context(dir, "eval-1", out);
  const Json j = cmd_attack_eval(ctx, dir / "eval.jsonl", 4, {1, 2});
  for (const char* key : {"method", "M", "N", "asr@1", "asr@2", "asr@3", "mrr", "seed", "config_digest"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["M"] == 6);
  CHECK(j["N"] == 4);
  CHECK(j["method"] == "decomposition");
  const auto pools = read_jsonl_as<CandidatePool>(dir / "runs/eval-1/pools.jsonl");
  CHECK(pools.size() == 6);
  for (const auto& p : pools) CHECK(p.valid());

  auto raw = mock_context(dir, "eval-raw", out);
  CHECK(cmd_attack_eval(raw, dir / "eval.jsonl", 4, {1}, "raw")["method"] == "raw");
  auto bad = mock_context(dir, "eval-bad", out);
  CHECK(code_of([&] { cmd_attack_eval(bad, dir / "eval.jsonl", 4, {5}); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { cmd_attack_eval(bad, dir / "eval.jsonl", 4, {1}, "other"); }) ==
        ErrorCode::kInvalidArgument);
  fs::remove_all(dir);
}

TEST_CASE("dataset-build writes the split and stats") {
  const auto dir = fresh_dir("dataset");
  std::vector<SourceDocument> docs;
  for (int i = 0; i < 6; ++i) {
    docs.push_back({"doc" + std::to_string(i),
                    "Study " + std::to_string(i) + " measured cytokine levels. Cohort " + std::to_string(i) +
                        " included adults. Result " + std::to_string(i) + " showed a reduction.",
                    "unit"});
  }
  write_jsonl(dir / "docs.jsonl", docs);
  std::ostringstream out;
  auto ctx = mock_context(dir, "ds", out);
  const Json stats = cmd_dataset_build(ctx, dir / "docs.jsonl");
  const fs::path d = dir / "runs/ds/dataset";
  for (const char* f : {"qa_scored.jsonl", "qa_kept.jsonl", "train.jsonl", "test.jsonl", "stats.json"}) {
    CHECK(fs::exists(d / f));
  }
  const auto kept = read_jsonl_as<QAPair>(d / "qa_kept.jsonl");
  for (const auto& p : kept) CHECK(*p.judge_score > 4.0);
  const auto train = read_jsonl_as<SensitiveQuery>(d / "train.jsonl");
  const auto test = read_jsonl_as<SensitiveQuery>(d / "test.jsonl");
  CHECK(train.size() + test.size() == kept.size());
  for (const auto& q : train) CHECK(q.reference_answer);
  CHECK(stats["total"] == kept.size());
  fs::remove_all(dir);
}

TEST_CASE("metrics command") {
  const auto dir = fresh_dir("metrics");
  write_text_atomic(dir / "cand.txt", "the cat sat on the mat\nalpha beta\n");
  write_text_atomic(dir / "ref.txt", "the cat sat on the mat\ngamma delta\n");
  std::ostringstream out;
  auto ctx = mock_context(dir, "m", out);
  ctx.config.sim = SimMode::kRougeLF1;
  const Json j = cmd_metrics(ctx, dir / "cand.txt", dir / "ref.txt");
  CHECK(j["lines"] == 2);
  CHECK(j["mean"]["rouge1"] == 0.5);
  CHECK(j["mean"]["rougeL"] == 0.5);
  CHECK(j["mean"]["sim"] == 0.5);
  CHECK(fs::exists(dir / "runs/m/metrics.json"));

  auto e = mock_context(dir, "m2", out);
  e.config.sim = SimMode::kRougeLF1;
  CHECK(code_of([&] { cmd_metrics(e, dir / "nope.txt", dir / "ref.txt"); }) == ErrorCode::kInvalidArgument);
  write_text_atomic(dir / "short.txt", "one line\n");
  CHECK(code_of([&] { cmd_metrics(e, dir / "short.txt", dir / "ref.txt"); }) == ErrorCode::kInvalidArgument);
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorCode::kConfigInvalid) == 2);
  CHECK(exit_code_for(ErrorCode::kInvalidArgument) == 2);
  CHECK(exit_code_for(ErrorCode::kTrustViolation) == 2);
  CHECK(exit_code_for(ErrorCode::kSnapshotMismatch) == 2);
  CHECK(exit_code_for(ErrorCode::kUnreachable) == 3);
  CHECK(exit_code_for(ErrorCode::kAttackerNotUpdated) == 3);
}
