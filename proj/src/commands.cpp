#include "privq/commands.hpp"

#include <ctime>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "privq/digest.hpp"
#include "privq/error.hpp"
#include "privq/game.hpp"
#include "privq/integrator.hpp"
#include "privq/jsonl.hpp"
#include "privq/parallel.hpp"

namespace privq {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Audit transport

HttpResponse AuditTransport::post(const EndpointSpec& endpoint, const std::string& path,
                                  const std::string& body,
                                  const std::map<std::string, std::string>& headers) {
  if (!endpoint.trusted()) {
    std::lock_guard lock(mu_);
    untrusted_bodies_.push_back(body);
  }
  return inner_->post(endpoint, path, body, headers);
}

HttpResponse AuditTransport::get(const EndpointSpec& endpoint, const std::string& path) {
  return inner_->get(endpoint, path);
}

std::size_t AuditTransport::untrusted_requests() const {
  std::lock_guard lock(mu_);
  return untrusted_bodies_.size();
}

std::size_t AuditTransport::untrusted_containing(const std::string& text) const {
  const std::string needle = normalize_text(text);
  if (needle.empty()) return 0;
  std::lock_guard lock(mu_);
  std::size_t count = 0;
  for (const auto& body : untrusted_bodies_) {
    bool hit = normalize_text(body).find(needle) != std::string::npos;
    if (!hit) {
      // JSON escaping can hide a match in the raw body; check decoded contents too.
      const Json j = Json::parse(body, nullptr, false);
      std::string joined;
      auto scan = [&](const std::string& s) {
        joined += s + "\n";
        if (normalize_text(s).find(needle) != std::string::npos) hit = true;
      };
      if (j.is_object() && j.contains("messages") && j["messages"].is_array()) {
        for (const auto& m : j["messages"]) {
          if (m.contains("content") && m["content"].is_string()) scan(m["content"].get<std::string>());
        }
      }
      if (j.is_object() && j.contains("input") && j["input"].is_array()) {
        for (const auto& s : j["input"]) {
          if (s.is_string()) scan(s.get<std::string>());
        }
      }
      if (!hit && normalize_text(joined).find(needle) != std::string::npos) hit = true;
    }
    if (hit) ++count;
  }
  return count;
}

// ---------------------------------------------------------------------------
// Runtime

void install_mock_responders(MockBackend& backend, const AppConfig& cfg) {
  for (const auto& e : cfg.endpoints) {
    if (e.role == kRoleGenerator) backend.set_chat_responder(e.spec.id, mock_decomposer_responder());
    if (e.role == kRoleJudge) backend.set_chat_responder(e.spec.id, mock_judge_responder());
    if (e.role == kRoleQaGenerator) backend.set_chat_responder(e.spec.id, mock_qa_writer_responder());
  }
}

namespace {

struct Runtime {
  std::shared_ptr<MockBackend> mock;
  std::shared_ptr<AuditTransport> audit;
  std::unique_ptr<LlmClient> client;
};

Runtime make_runtime(const CommandContext& ctx) {
  Runtime rt;
  std::shared_ptr<Transport> inner = ctx.transport;
  ClientOptions options = ctx.config.client_options();
  if (!inner && ctx.mock) {
    rt.mock = std::make_shared<MockBackend>();
    install_mock_responders(*rt.mock, ctx.config);
    inner = std::make_shared<MockTransport>(rt.mock);
    options.cache_dir.clear();
  }
  if (!inner) inner = std::make_shared<HttpTransport>();
  rt.audit = std::make_shared<AuditTransport>(inner);
  rt.client = std::make_unique<LlmClient>(rt.audit, options);
  return rt;
}

std::string compact_timestamp() {
  const std::time_t tt = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return ss.str();
}

std::string resolve_run_id(const CommandContext& ctx, std::string_view command) {
  if (!ctx.run_id.empty()) {
    if (ctx.run_id.find('/') != std::string::npos || ctx.run_id == "." || ctx.run_id == "..") {
      throw Error(ErrorCode::kInvalidArgument, "run id '" + ctx.run_id + "' is not a plain name");
    }
    return ctx.run_id;
  }
  if (ctx.resume) throw Error(ErrorCode::kInvalidArgument, "--resume needs a run id");
  return std::string(command) + "-" + compact_timestamp() + "-" + ctx.config.digest().substr(0, 8);
}

void require_file(const fs::path& path, std::string_view what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    throw Error(ErrorCode::kInvalidArgument, std::string(what) + " not found: " + path.string());
  }
}

void write_manifest(const fs::path& run_path, const std::string& run_id, const AppConfig& cfg,
                    std::map<std::string, std::string> artifacts, const std::string& started) {
  RunManifest m;
  m.run_id = run_id;
  m.config_snapshot = cfg.snapshot();
  m.config_digest = cfg.digest();
  m.artifact_paths = std::move(artifacts);
  m.timestamps["started"] = started;
  m.timestamps["completed"] = utc_timestamp();
  write_text_atomic(run_path / "manifest.json", Json(m).dump(2) + "\n");
}

std::ostream& out_of(const CommandContext& ctx) { return ctx.out ? *ctx.out : std::cout; }

GameContext game_context(const CommandContext& ctx, LlmClient& client) {
  return GameContext{client,
                     ctx.config.game_endpoints(),
                     ctx.config.sim_backend(),
                     ctx.config.game,
                     ctx.config.decoding,
                     ctx.config.seed,
                     nullptr};
}

}  // namespace

// ---------------------------------------------------------------------------
// ask

AskResult cmd_ask(CommandContext& ctx, const std::string& query_text, DomainTag domain) {
  ctx.config.validate();
  if (query_text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "query text is empty");
  }
  const std::string started = utc_timestamp();
  const std::string run_id = resolve_run_id(ctx, "ask");
  Runtime rt = make_runtime(ctx);
  GameContext game = game_context(ctx, *rt.client);

  SensitiveQuery q;
  q.id = "ask";
  q.text = query_text;
  q.domain_tag = domain;
  const std::string forbidden[] = {q.text};

  const SubQueryGroup group = generate_group(game, q, 0, 0);
  auto responses =
      rt.client->dispatch_group(game.endpoints.external, group, ctx.config.decoding, forbidden);
  AskResult result;
  IntegrationRequest req{q, group, responses};
  result.answer = integrate(*rt.client, req, game.endpoints.integrator, ctx.config.decoding);

  Json subs = Json::array();
  for (const auto& s : group.subqueries) subs.push_back(s.text);
  result.report = Json{
      {"run_id", run_id},
      {"query", q.text},
      {"domain_tag", to_string(domain)},
      {"sub_queries", subs},
      {"responses", responses},
      {"answer", result.answer},
      {"guard_audit",
       {{"untrusted_requests", rt.audit->untrusted_requests()},
        {"untrusted_payloads_containing_query", rt.audit->untrusted_containing(q.text)},
        {"guard_blocks", rt.client->stats().guard_blocks}}},
      {"seed", ctx.config.seed},
      {"config_digest", ctx.config.digest()},
  };

  result.run_path = ctx.config.run_dir / run_id;
  fs::create_directories(result.run_path);
  const fs::path report_path = result.run_path / "ask_report.json";
  write_text_atomic(report_path, result.report.dump(2) + "\n");
  write_manifest(result.run_path, run_id, ctx.config, {{"report", report_path.string()}}, started);
  out_of(ctx) << result.answer << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// train

RunManifest cmd_train(CommandContext& ctx, const fs::path& dataset_path) {
  ctx.config.validate();
  require_file(dataset_path, "dataset");
  const auto dataset = read_jsonl_as<SensitiveQuery>(dataset_path);
  const std::string run_id = resolve_run_id(ctx, "train");
  const fs::path run_path = ctx.config.run_dir / run_id;
  Runtime rt = make_runtime(ctx);

  if (rt.mock) {
    // No trainer runs under --mock; the fixed mock attacker stands in for
    // every round's checkpoint.
    const std::string digest = "mock-" + ctx.config.digest().substr(0, 16);
    rt.mock->set_health_digest(ctx.config.endpoint(kRoleAttacker).id, digest);
    for (int t = 0; t < ctx.config.game.T; ++t) {
      const fs::path ready = round_dir(run_path, t) / "attacker.ready";
      if (!fs::exists(ready)) {
        fs::create_directories(ready.parent_path());
        write_text_atomic(ready, digest + "\n");
      }
    }
  }

  GameContext game = game_context(ctx, *rt.client);
  TrainingOptions options{run_id, ctx.config.snapshot(), ctx.resume};
  RunManifest m = run_training(game, dataset, run_path, options);
  out_of(ctx) << "run " << m.run_id << ": " << m.rounds.size() << " round(s) complete, manifest "
              << (run_path / "manifest.json").string() << "\n";
  return m;
}

// ---------------------------------------------------------------------------
// attack-eval

Json cmd_attack_eval(CommandContext& ctx, const fs::path& eval_path, std::optional<int> pool_size,
                     const std::vector<int>& k_list, const std::string& method) {
  ctx.config.validate();
  if (method != "decomposition" && method != "raw") {
    throw Error(ErrorCode::kInvalidArgument, "unknown attack-eval method '" + method + "'");
  }
  require_file(eval_path, "evaluation set");
  const auto queries = read_jsonl_as<SensitiveQuery>(eval_path);
  if (queries.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluation set is empty");
  PoolOptions pool_opts = ctx.config.eval;
  if (pool_size) pool_opts.size = *pool_size;
  for (int k : k_list) {
    if (k < 1 || k > pool_opts.size) {
      throw Error(ErrorCode::kInvalidArgument,
                  "k=" + std::to_string(k) + " is outside [1, " + std::to_string(pool_opts.size) + "]");
    }
  }

  const std::string started = utc_timestamp();
  const std::string run_id = resolve_run_id(ctx, "attack-eval");
  Runtime rt = make_runtime(ctx);
  GameContext game = game_context(ctx, *rt.client);

  std::vector<std::string> corpus;
  for (const auto& q : queries) corpus.push_back(q.text);
  std::vector<CandidatePool> pools(queries.size());
  parallel_for(queries.size(), static_cast<std::size_t>(ctx.config.game.workers), [&](std::size_t i) {
    const auto& q = queries[i];
    CandidatePool pool =
        build_pool(q.text, corpus, pool_opts, mix_seed(ctx.config.seed, fnv1a64(q.id)), q.id);
    Observation obs = q.text;
    if (method == "decomposition") obs = generate_group(game, q, 0, 0);
    pools[i] = rank_candidates(*rt.client, obs, std::move(pool), game.endpoints.attacker, game.sim);
  });

  const EvalReport report = make_report(pools, method, k_list, ctx.config.seed, ctx.config.digest());
  const Json j = report_json(report);
  const fs::path run_path = ctx.config.run_dir / run_id;
  fs::create_directories(run_path);
  write_jsonl(run_path / "pools.jsonl", pools);
  write_text_atomic(run_path / "attack_eval.json", j.dump(2) + "\n");
  write_manifest(run_path, run_id, ctx.config,
                 {{"report", (run_path / "attack_eval.json").string()},
                  {"pools", (run_path / "pools.jsonl").string()}},
                 started);
  out_of(ctx) << j.dump(2) << "\n";
  return j;
}

// ---------------------------------------------------------------------------
// dataset-build

Json cmd_dataset_build(CommandContext& ctx, const fs::path& docs_path) {
  ctx.config.validate();
  const EndpointSpec& generator = ctx.config.endpoint(kRoleQaGenerator);
  const EndpointSpec& judge = ctx.config.endpoint(kRoleJudge);
  require_file(docs_path, "document file");
  const auto docs = read_jsonl_as<SourceDocument>(docs_path);
  for (const auto& d : docs) {
    if (d.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "document '" + d.id + "' has empty text");
    }
  }

  const std::string started = utc_timestamp();
  const std::string run_id = resolve_run_id(ctx, "dataset");
  Runtime rt = make_runtime(ctx);
  const PipelineResult r =
      build_dataset(*rt.client, docs, generator, judge, ctx.config.dataset, ctx.config.seed);

  const fs::path dir = ctx.config.run_dir / run_id / "dataset";
  fs::create_directories(dir);
  write_jsonl(dir / "qa_scored.jsonl", r.scored);
  write_jsonl(dir / "qa_kept.jsonl", r.kept);
  write_jsonl(dir / "train.jsonl", to_queries(r.parts.train, ctx.config.dataset.domain));
  write_jsonl(dir / "test.jsonl", to_queries(r.parts.test, ctx.config.dataset.domain));
  const Json stats = r.stats;
  write_text_atomic(dir / "stats.json", stats.dump(2) + "\n");

  std::map<std::string, std::string> artifacts;
  for (const char* name : {"qa_scored.jsonl", "qa_kept.jsonl", "train.jsonl", "test.jsonl", "stats.json"}) {
    artifacts[name] = (dir / name).string();
  }
  write_manifest(ctx.config.run_dir / run_id, run_id, ctx.config, artifacts, started);
  out_of(ctx) << stats.dump(2) << "\n";
  return stats;
}

// ---------------------------------------------------------------------------
// metrics

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

Json cmd_metrics(CommandContext& ctx, const fs::path& candidates, const fs::path& references) {
  require_file(candidates, "candidate file");
  require_file(references, "reference file");
  const auto cand = read_lines(candidates);
  const auto ref = read_lines(references);
  if (cand.size() != ref.size()) {
    throw Error(ErrorCode::kInvalidArgument, "candidate file has " + std::to_string(cand.size()) +
                                                 " lines but reference file has " +
                                                 std::to_string(ref.size()));
  }
  if (cand.empty()) throw Error(ErrorCode::kInvalidArgument, "no lines to score");

  const SimBackend backend = ctx.config.sim_backend();
  std::optional<Runtime> rt;
  if (backend.mode == SimMode::kEmbeddingCosine) {
    backend.validate();
    rt = make_runtime(ctx);
  }

  const std::string started = utc_timestamp();
  const std::string run_id = resolve_run_id(ctx, "metrics");
  static const char* kNames[] = {"rouge1", "rouge2", "rougeL", "meteor", "sim"};
  Json rows = Json::array();
  double sums[5] = {0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const double v[5] = {rouge_n(cand[i], ref[i], 1).f1, rouge_n(cand[i], ref[i], 2).f1,
                         rouge_l(cand[i], ref[i]).f1, meteor_lite(cand[i], ref[i]),
                         sim(cand[i], ref[i], backend, rt ? rt->client.get() : nullptr)};
    Json row{{"line", i + 1}};
    for (int m = 0; m < 5; ++m) {
      row[kNames[m]] = v[m];
      sums[m] += v[m];
    }
    rows.push_back(std::move(row));
  }
  Json mean;
  for (int m = 0; m < 5; ++m) mean[kNames[m]] = sums[m] / static_cast<double>(cand.size());
  const Json result{{"lines", cand.size()}, {"sim_mode", to_string(backend.mode)}, {"mean", mean}, {"rows", rows}};

  const fs::path run_path = ctx.config.run_dir / run_id;
  fs::create_directories(run_path);
  write_text_atomic(run_path / "metrics.json", result.dump(2) + "\n");
  write_manifest(run_path, run_id, ctx.config, {{"metrics", (run_path / "metrics.json").string()}}, started);

  auto& out = out_of(ctx);
  out << std::left << std::setw(8) << "metric" << "mean\n";
  out << std::fixed << std::setprecision(4);
  for (int m = 0; m < 5; ++m) out << std::setw(8) << kNames[m] << mean[kNames[m]].get<double>() << "\n";
  out.unsetf(std::ios::floatfield);
  return result;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfigInvalid:
    case ErrorCode::kTrustViolation:
    case ErrorCode::kMissingReference:
    case ErrorCode::kSnapshotMismatch:
    case ErrorCode::kUnresolvedQueryId:
    case ErrorCode::kInsufficientDecoys:
      return 2;
    default:
      return 3;
  }
}

}  // namespace privq
