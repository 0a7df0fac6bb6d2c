#include "privq/game.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "privq/digest.hpp"
#include "privq/error.hpp"
#include "privq/integrator.hpp"
#include "privq/jsonl.hpp"
#include "privq/parallel.hpp"
#include "privq/rng.hpp"

namespace privq {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

void GameConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfigInvalid, "game." + msg); };
  if (K < 2) fail("K must be >= 2");
  if (n < 1) fail("n must be >= 1");
  if (!(alpha >= 0.0)) fail("alpha must be >= 0");
  if (!(beta >= 0.0)) fail("beta must be >= 0");
  if (T < 1) fail("T must be >= 1");
  if (!(tie_epsilon >= 0.0)) fail("tie_epsilon must be >= 0");
  if (min_surviving_candidates < 2) fail("min_surviving_candidates must be >= 2");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (workers < 1) fail("workers must be >= 1");
  if (handshake_poll.count() < 1) fail("handshake_poll_ms must be >= 1");
}

void to_json(Json& j, const GameConfig& v) {
  j = Json{{"K", v.K},
           {"n", v.n},
           {"alpha", v.alpha},
           {"beta", v.beta},
           {"T", v.T},
           {"tie_epsilon", v.tie_epsilon},
           {"min_surviving_candidates", v.min_surviving_candidates},
           {"batch_size", v.batch_size},
           {"workers", v.workers},
           {"handshake_timeout_ms", v.handshake_timeout.count()},
           {"handshake_poll_ms", v.handshake_poll.count()},
           {"verify_attacker_health", v.verify_attacker_health}};
}

void from_json(const Json& j, GameConfig& v) {
  const GameConfig d;
  v.K = j.value("K", d.K);
  v.n = j.value("n", d.n);
  v.alpha = j.value("alpha", d.alpha);
  v.beta = j.value("beta", d.beta);
  v.T = j.value("T", d.T);
  v.tie_epsilon = j.value("tie_epsilon", d.tie_epsilon);
  v.min_surviving_candidates = j.value("min_surviving_candidates", d.min_surviving_candidates);
  v.batch_size = j.value("batch_size", d.batch_size);
  v.workers = j.value("workers", d.workers);
  v.handshake_timeout =
      std::chrono::milliseconds(j.value("handshake_timeout_ms", d.handshake_timeout.count()));
  v.handshake_poll = std::chrono::milliseconds(j.value("handshake_poll_ms", d.handshake_poll.count()));
  v.verify_attacker_health = j.value("verify_attacker_health", d.verify_attacker_health);
}

// ---------------------------------------------------------------------------
// Events

void EventLog::record(std::string kind, int round, std::string query_id, int candidate_index) {
  std::lock_guard lock(mu_);
  events_.push_back({events_.size(), std::move(kind), round, std::move(query_id), candidate_index});
}

std::vector<Event> EventLog::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

namespace {

void emit(GameContext& ctx, std::string_view kind, int round, const std::string& query_id = {},
          int k = -1) {
  if (ctx.events) ctx.events->record(std::string(kind), round, query_id, k);
}

std::string domain_hint(DomainTag tag) {
  switch (tag) {
    case DomainTag::kBiomedical:
      return " Replace specific genes, proteins, drugs, cell types and patient details with "
             "general mechanism-level wording.";
    case DomainTag::kLegal:
      return " Replace party names, case identifiers, dates and places with general "
             "doctrine-level wording.";
    case DomainTag::kOther:
      break;
  }
  return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Candidate generation

std::string render_generation_prompt(const SensitiveQuery& query, int n) {
  const std::string count = std::to_string(n);
  return "You are a privacy-aware query decomposer running inside a trusted environment.\n"
         "Rewrite the QUESTION below as exactly " + count +
         " general sub-queries that together gather the background knowledge needed to "
         "answer it. Each sub-query must stand on its own and must not reveal the specific "
         "entities, identifiers or context of the QUESTION." + domain_hint(query.domain_tag) +
         "\n\nQUESTION:\n" + query.text + "\n\nReply with exactly " + count +
         " lines formatted as \"<index>. <sub-query>\", numbered from 1.";
}

std::string render_reprompt(int n) {
  const std::string count = std::to_string(n);
  return "Your previous reply did not contain exactly " + count +
         " numbered sub-queries. Reply with exactly " + count +
         " lines formatted as \"<index>. <sub-query>\", numbered from 1, and nothing else.";
}

namespace {

struct NumberedLine {
  int index = 0;
  std::string text;
};

std::optional<NumberedLine> parse_numbered_line(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  const std::size_t digits_start = i;
  while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
  if (i == digits_start || i - digits_start > 6) return std::nullopt;
  if (i >= line.size() || line[i] != '.') return std::nullopt;
  const int index = std::stoi(std::string(line.substr(digits_start, i - digits_start)));
  ++i;
  if (i >= line.size() || (line[i] != ' ' && line[i] != '\t')) return std::nullopt;
  std::string_view rest = line.substr(i);
  const auto first = rest.find_first_not_of(" \t");
  if (first == std::string_view::npos) return std::nullopt;
  const auto last = rest.find_last_not_of(" \t\r");
  return NumberedLine{index, std::string(rest.substr(first, last - first + 1))};
}

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace

std::optional<std::vector<std::string>> parse_numbered_list(std::string_view completion, int n) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= completion.size()) {
    const auto end = completion.find('\n', start);
    if (end == std::string_view::npos) {
      lines.push_back(completion.substr(start));
      break;
    }
    lines.push_back(completion.substr(start, end - start));
    start = end + 1;
  }
  for (std::size_t s = 0; s < lines.size(); ++s) {
    auto head = parse_numbered_line(lines[s]);
    if (!head || head->index != 1) continue;
    std::vector<std::string> items{head->text};
    for (std::size_t j = s + 1; j < lines.size(); ++j) {
      if (is_blank(lines[j])) continue;
      auto next = parse_numbered_line(lines[j]);
      if (!next || next->index != static_cast<int>(items.size()) + 1) break;
      items.push_back(std::move(next->text));
    }
    if (static_cast<int>(items.size()) == n) return items;
  }
  return std::nullopt;
}

std::string format_numbered_list(const SubQueryGroup& group) {
  std::string out;
  for (std::size_t i = 0; i < group.subqueries.size(); ++i) {
    if (i) out += '\n';
    out += std::to_string(i + 1) + ". " + group.subqueries[i].text;
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t run_seed, const std::string& query_id, int round, int k) {
  std::uint64_t s = mix_seed(run_seed, fnv1a64(query_id));
  s = mix_seed(s, static_cast<std::uint64_t>(round));
  return mix_seed(s, static_cast<std::uint64_t>(k));
}

SubQueryGroup generate_group(GameContext& ctx, const SensitiveQuery& query, int candidate_index,
                             int round) {
  const int n = ctx.cfg.n;
  const std::string forbidden[] = {query.text};
  ChatRequest req;
  req.messages = {{Role::kUser, render_generation_prompt(query, n)}};
  req.decoding = ctx.decoding;
  req.seed = sample_seed(ctx.seed, query.id, round, candidate_index);

  std::string completion = ctx.client.chat(ctx.endpoints.generator, req, forbidden).text;
  auto items = parse_numbered_list(completion, n);
  if (!items) {
    req.messages.push_back({Role::kAssistant, completion});
    req.messages.push_back({Role::kUser, render_reprompt(n)});
    completion = ctx.client.chat(ctx.endpoints.generator, req, forbidden).text;
    items = parse_numbered_list(completion, n);
  }
  if (!items) {
    throw Error(ErrorCode::kParseFailure, "generator output for query '" + query.id +
                                              "' candidate " + std::to_string(candidate_index) +
                                              " has no " + std::to_string(n) + "-item list");
  }
  SubQueryGroup group;
  group.query_id = query.id;
  group.candidate_index = candidate_index;
  group.round = round;
  group.decoding = ctx.decoding;
  for (int i = 0; i < n; ++i) group.subqueries.push_back({i, std::move((*items)[static_cast<std::size_t>(i)])});
  return group;
}

std::vector<SubQueryGroup> sample_candidates(GameContext& ctx, const SensitiveQuery& query,
                                             int round) {
  if (!ctx.endpoints.generator.trusted()) {
    throw Error(ErrorCode::kTrustViolation,
                "generator endpoint '" + ctx.endpoints.generator.id + "' is not trusted");
  }
  if (!(ctx.decoding.temperature > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "candidate sampling needs temperature > 0");
  }
  std::vector<SubQueryGroup> groups;
  groups.reserve(static_cast<std::size_t>(ctx.cfg.K));
  for (int k = 0; k < ctx.cfg.K; ++k) groups.push_back(generate_group(ctx, query, k, round));
  return groups;
}

// ---------------------------------------------------------------------------
// Rewards and preferences

RewardRecord evaluate_candidate(GameContext& ctx, const SensitiveQuery& query,
                                const SubQueryGroup& group, const AttackOptions& attack) {
  if (!query.reference_answer) {
    throw Error(ErrorCode::kMissingReference, "query '" + query.id + "' has no reference answer");
  }
  const std::string forbidden[] = {query.text};
  std::vector<ExternalResponse> responses;
  try {
    responses = ctx.client.dispatch_group(ctx.endpoints.external, group, ctx.decoding, forbidden);
  } catch (const PartialFailure& e) {
    throw Error(ErrorCode::kCandidateDropped, e.what());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kPrivacyViolation) throw;
    throw Error(ErrorCode::kCandidateDropped, e.what());
  }

  RewardRecord rec;
  rec.query_id = query.id;
  rec.round = group.round;
  rec.candidate_index = group.candidate_index;
  rec.alpha = ctx.cfg.alpha;
  rec.beta = ctx.cfg.beta;
  rec.integrated_answer =
      integrate(ctx.client, {query, group, std::move(responses)}, ctx.endpoints.integrator, ctx.decoding);
  rec.reconstructed_query = reconstruct(ctx.client, group, ctx.endpoints.attacker, attack, forbidden);
  rec.quality = clamp_unit(
      quality_score(rec.integrated_answer, query.reference_answer, ctx.sim, &ctx.client, forbidden));
  rec.leakage = clamp_unit(
      leakage_score(query.text, rec.reconstructed_query, ctx.sim, &ctx.client, forbidden));
  rec.reward = compute_reward(rec.quality, rec.leakage, rec.alpha, rec.beta);
  return rec;
}

std::optional<Extremes> select_extremes(std::span<const RewardRecord> records) {
  if (records.empty()) return std::nullopt;
  auto better = [](const RewardRecord& a, const RewardRecord& b) {
    if (a.reward != b.reward) return a.reward > b.reward;
    if (a.leakage != b.leakage) return a.leakage < b.leakage;
    return a.candidate_index < b.candidate_index;
  };
  auto worse = [](const RewardRecord& a, const RewardRecord& b) {
    if (a.reward != b.reward) return a.reward < b.reward;
    if (a.leakage != b.leakage) return a.leakage > b.leakage;
    return a.candidate_index < b.candidate_index;
  };
  Extremes e;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (better(records[i], records[e.chosen])) e.chosen = i;
    if (worse(records[i], records[e.rejected])) e.rejected = i;
  }
  return e;
}

std::optional<PreferencePair> build_preference_pair(std::span<const RewardRecord> records,
                                                    std::span<const SubQueryGroup> groups,
                                                    const GameConfig& cfg,
                                                    const std::string& prompt) {
  if (records.size() < static_cast<std::size_t>(std::max(2, cfg.min_surviving_candidates))) {
    return std::nullopt;
  }
  const auto ext = select_extremes(records);
  const RewardRecord& best = records[ext->chosen];
  const RewardRecord& worst = records[ext->rejected];
  if (!(best.reward - worst.reward > cfg.tie_epsilon)) return std::nullopt;

  auto find_group = [&](int k) -> const SubQueryGroup* {
    for (const auto& g : groups) {
      if (g.candidate_index == k && g.query_id == best.query_id) return &g;
    }
    return nullptr;
  };
  const SubQueryGroup* chosen = find_group(best.candidate_index);
  const SubQueryGroup* rejected = find_group(worst.candidate_index);
  if (!chosen || !rejected) {
    throw Error(ErrorCode::kInvalidArgument, "reward record without a matching group");
  }
  PreferencePair pair;
  pair.query_id = best.query_id;
  pair.prompt = prompt;
  pair.chosen = format_numbered_list(*chosen);
  pair.rejected = format_numbered_list(*rejected);
  if (pair.chosen == pair.rejected) return std::nullopt;
  pair.chosen_reward = best.reward;
  pair.rejected_reward = worst.reward;
  pair.round = best.round;
  return pair;
}

// ---------------------------------------------------------------------------
// Rounds

fs::path round_dir(const fs::path& run_dir, int round) {
  return run_dir / "rounds" / std::to_string(round);
}

namespace {

std::optional<std::string> read_ready_digest(const fs::path& ready_file) {
  std::error_code ec;
  if (!fs::exists(ready_file, ec)) return std::nullopt;
  std::string text;
  try {
    text = read_text_file(ready_file);
  } catch (const Error&) {
    return std::nullopt;
  }
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return std::nullopt;
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

}  // namespace

std::string wait_for_attacker(GameContext& ctx, const fs::path& ready_file) {
  const auto deadline = std::chrono::steady_clock::now() + ctx.cfg.handshake_timeout;
  std::string last_problem = "no handshake file at " + ready_file.string();
  while (true) {
    if (auto digest = read_ready_digest(ready_file)) {
      if (!ctx.cfg.verify_attacker_health) return *digest;
      try {
        const Json h = ctx.client.health(ctx.endpoints.attacker);
        const std::string served = h.value("checkpoint_digest", std::string());
        if (served == *digest) return *digest;
        last_problem = "attacker serves checkpoint '" + served + "' but handshake says '" + *digest + "'";
      } catch (const Error& e) {
        last_problem = e.what();
      }
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw Error(ErrorCode::kAttackerNotUpdated, last_problem);
    }
    std::this_thread::sleep_for(ctx.cfg.handshake_poll);
  }
}

RoundArtifacts run_round(GameContext& ctx, std::span<const SensitiveQuery> batch, int round,
                         const fs::path& run_dir) {
  ctx.cfg.validate();
  const fs::path dir = round_dir(run_dir, round);
  fs::create_directories(dir);

  RoundArtifacts art;
  art.round = round;
  art.sft_dataset_path = (dir / "sft.jsonl").string();
  art.dpo_dataset_path = (dir / "dpo.jsonl").string();
  art.reward_log_path = (dir / "rewards.jsonl").string();
  art.counts.queries = static_cast<int>(batch.size());
  const auto workers = static_cast<std::size_t>(ctx.cfg.workers);

  std::map<std::string, SensitiveQuery> by_id;
  for (const auto& q : batch) by_id.emplace(q.id, q);

  JsonlWriter errors(dir / "errors.jsonl");
  auto log_error = [&](const std::string& qid, int k, std::string_view stage, const std::exception& e) {
    errors.write(Json{{"query_id", qid}, {"candidate_index", k}, {"stage", stage}, {"error", e.what()}});
  };

  // Phase A: sample candidates and publish the attacker's SFT data.
  std::vector<std::vector<SubQueryGroup>> groups(batch.size());
  std::vector<char> query_failed(batch.size(), 0);
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    try {
      groups[i] = sample_candidates(ctx, batch[i], round);
    } catch (const std::exception& e) {
      query_failed[i] = 1;
      log_error(batch[i].id, -1, "sample", e);
    }
  });
  {
    JsonlWriter sft(art.sft_dataset_path);
    for (const auto& gs : groups) {
      for (const auto& s : emit_sft_samples(gs, by_id)) sft.write(Json(s));
    }
    sft.finalize();
  }
  emit(ctx, kEventSftFinalized, round);

  // Phase B: the attacker for this round must be served before any reward.
  AttackOptions attack;
  attack.max_tokens = ctx.decoding.max_tokens;
  attack.checkpoint_digest = wait_for_attacker(ctx, dir / "attacker.ready");
  emit(ctx, kEventAttackerReady, round);

  // Phase C: score every candidate against the updated attacker.
  struct Task {
    std::size_t query;
    std::size_t group;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t g = 0; g < groups[i].size(); ++g) tasks.push_back({i, g});
  }
  std::vector<std::optional<RewardRecord>> results(tasks.size());
  std::vector<char> dropped(tasks.size(), 0);
  parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const auto& q = batch[tasks[t].query];
    const auto& g = groups[tasks[t].query][tasks[t].group];
    try {
      results[t] = evaluate_candidate(ctx, q, g, attack);
      emit(ctx, kEventRewardComputed, round, q.id, g.candidate_index);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kCandidateDropped) {
        dropped[t] = 1;
        log_error(q.id, g.candidate_index, "dispatch", e);
      } else {
        query_failed[tasks[t].query] = 1;
        log_error(q.id, g.candidate_index, "evaluate", e);
      }
    } catch (const std::exception& e) {
      query_failed[tasks[t].query] = 1;
      log_error(q.id, g.candidate_index, "evaluate", e);
    }
  });

  JsonlWriter rewards(art.reward_log_path);
  JsonlWriter dpo(art.dpo_dataset_path);
  std::size_t t = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::vector<RewardRecord> records;
    for (std::size_t g = 0; g < groups[i].size(); ++g, ++t) {
      if (dropped[t]) ++art.counts.candidates_dropped;
      if (results[t]) records.push_back(*results[t]);
    }
    if (query_failed[i]) {
      ++art.counts.queries_failed;
      continue;
    }
    for (const auto& r : records) rewards.write(Json(r));
    auto pair = build_preference_pair(records, groups[i], ctx.cfg,
                                      render_generation_prompt(batch[i], ctx.cfg.n));
    if (pair) {
      dpo.write(Json(*pair));
      ++art.counts.pairs_emitted;
    } else {
      ++art.counts.pairs_skipped;
    }
  }
  rewards.finalize();
  dpo.finalize();
  errors.finalize();
  return art;
}

std::vector<SensitiveQuery> sample_batch(std::span<const SensitiveQuery> dataset, int batch_size,
                                         std::uint64_t seed, int round) {
  std::mt19937_64 rng(mix_seed(mix_seed(seed, 0x62617463ULL), static_cast<std::uint64_t>(round)));
  const auto idx = sample_without_replacement(dataset.size(),
                                              static_cast<std::size_t>(std::max(0, batch_size)), rng);
  std::vector<SensitiveQuery> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(dataset[i]);
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

namespace {

void write_manifest(const fs::path& run_dir, const RunManifest& m) {
  write_text_atomic(run_dir / "manifest.json", Json(m).dump(2) + "\n");
}

}  // namespace

RunManifest run_training(GameContext& ctx, std::span<const SensitiveQuery> dataset,
                         const fs::path& run_dir, const TrainingOptions& options) {
  ctx.cfg.validate();
  if (dataset.empty()) throw Error(ErrorCode::kInvalidArgument, "training set is empty");
  std::set<std::string> ids;
  for (const auto& q : dataset) {
    if (q.text.empty()) throw Error(ErrorCode::kInvalidArgument, "query '" + q.id + "' has empty text");
    if (!q.reference_answer) {
      throw Error(ErrorCode::kMissingReference,
                  "training query '" + q.id + "' has no reference_answer");
    }
    if (!ids.insert(q.id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate query id '" + q.id + "'");
    }
  }

  const std::string digest = sha256_hex(options.config_snapshot.dump());
  const fs::path manifest_path = run_dir / "manifest.json";
  RunManifest manifest;
  if (fs::exists(manifest_path)) {
    if (!options.resume) {
      throw Error(ErrorCode::kInvalidArgument,
                  "run directory " + run_dir.string() + " already has a manifest; resume it instead");
    }
    manifest = Json::parse(read_text_file(manifest_path)).get<RunManifest>();
    if (manifest.config_digest != digest) {
      throw Error(ErrorCode::kSnapshotMismatch,
                  "config differs from the snapshot of run '" + manifest.run_id + "'");
    }
  } else {
    if (options.resume) {
      throw Error(ErrorCode::kInvalidArgument, "no manifest to resume at " + manifest_path.string());
    }
    manifest.run_id = options.run_id;
    manifest.round = 0;
    manifest.config_snapshot = options.config_snapshot;
    manifest.config_digest = digest;
    manifest.timestamps["created"] = utc_timestamp();
    fs::create_directories(run_dir);
    write_manifest(run_dir, manifest);
  }

  for (int t = manifest.round; t < ctx.cfg.T; ++t) {
    // A previous attempt at this round may have left partial outputs; the
    // handshake file belongs to the trainer and is kept.
    const fs::path dir = round_dir(run_dir, t);
    for (const char* name : {"sft.jsonl", "dpo.jsonl", "rewards.jsonl", "errors.jsonl"}) {
      std::error_code ec;
      fs::remove(dir / name, ec);
    }
    manifest.timestamps["round_" + std::to_string(t) + "_started"] = utc_timestamp();
    const auto batch = sample_batch(dataset, ctx.cfg.batch_size, ctx.seed, t);
    RoundArtifacts art = run_round(ctx, batch, t, run_dir);
    const std::string prefix = "round_" + std::to_string(t) + "_";
    manifest.artifact_paths[prefix + "sft"] = art.sft_dataset_path;
    manifest.artifact_paths[prefix + "dpo"] = art.dpo_dataset_path;
    manifest.artifact_paths[prefix + "rewards"] = art.reward_log_path;
    manifest.rounds.push_back(std::move(art));
    manifest.round = t + 1;
    manifest.timestamps[prefix + "completed"] = utc_timestamp();
    write_manifest(run_dir, manifest);
  }
  return manifest;
}

}  // namespace privq
