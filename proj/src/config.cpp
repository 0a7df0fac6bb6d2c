#include "privq/config.hpp"

#include <set>

#include "privq/digest.hpp"
#include "privq/error.hpp"
#include "privq/jsonl.hpp"

namespace privq {

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::kConfigInvalid, msg); }

const std::set<std::string>& known_roles() {
  static const std::set<std::string> roles{
      std::string(kRoleGenerator), std::string(kRoleExternal),  std::string(kRoleIntegrator),
      std::string(kRoleAttacker),  std::string(kRoleEmbedding), std::string(kRoleJudge),
      std::string(kRoleQaGenerator)};
  return roles;
}

}  // namespace

void AppConfig::validate() const {
  std::map<std::string, int> per_role;
  std::set<std::string> ids;
  for (const auto& e : endpoints) {
    e.spec.validate();
    if (!known_roles().count(e.role)) invalid("endpoint '" + e.spec.id + "': unknown role '" + e.role + "'");
    if (!ids.insert(e.spec.id).second) invalid("duplicate endpoint id '" + e.spec.id + "'");
    ++per_role[e.role];
  }
  for (const auto& [role, count] : per_role) {
    if (count > 1) invalid("role '" + role + "' is assigned to " + std::to_string(count) + " endpoints");
  }
  for (auto role : {kRoleGenerator, kRoleExternal, kRoleIntegrator, kRoleAttacker}) {
    if (!find(role)) invalid("no endpoint with role '" + std::string(role) + "'");
  }

  // The original query only ever travels to trusted endpoints.
  for (auto role : {kRoleGenerator, kRoleIntegrator}) {
    const auto& ep = endpoint(role);
    if (!ep.trusted()) {
      invalid(std::string(role) + " endpoint '" + ep.id + "' must be trusted");
    }
    if (ep.kind != EndpointKind::kChat) invalid(std::string(role) + " endpoint must be a chat endpoint");
  }
  const auto& ext = endpoint(kRoleExternal);
  if (ext.trusted()) invalid("external endpoint '" + ext.id + "' must be untrusted");
  for (auto role : {kRoleExternal, kRoleAttacker, kRoleJudge, kRoleQaGenerator}) {
    if (const auto* ep = find(role); ep && ep->kind != EndpointKind::kChat) {
      invalid(std::string(role) + " endpoint must be a chat endpoint");
    }
  }
  if (sim == SimMode::kEmbeddingCosine) {
    const auto* emb = find(kRoleEmbedding);
    if (!emb) invalid("sim mode embedding_cosine needs an endpoint with role 'embedding'");
    if (!emb->trusted()) invalid("embedding endpoint '" + emb->id + "' embeds the query and must be trusted");
  }
  if (const auto* emb = find(kRoleEmbedding); emb && emb->kind != EndpointKind::kEmbedding) {
    invalid("embedding endpoint '" + emb->id + "' must have kind 'embedding'");
  }

  game.validate();
  try {
    decoding.validate();
  } catch (const Error& e) {
    invalid(std::string("decoding: ") + e.what());
  }
  if (retry.max_attempts < 1) invalid("retry.max_attempts must be >= 1");
  if (eval.size < 2) invalid("eval.pool_size must be >= 2");
  if (!(eval.decoy_threshold > 0.0 && eval.decoy_threshold <= 1.0)) {
    invalid("eval.decoy_threshold must be in (0, 1]");
  }
  if (dataset.pairs_per_doc < 1) invalid("dataset.pairs_per_doc must be >= 1");
  if (!(dataset.split_ratio > 0.0 && dataset.split_ratio < 1.0)) {
    invalid("dataset.split_ratio must be in (0, 1)");
  }
  if (dataset.workers < 1) invalid("dataset.workers must be >= 1");
}

const EndpointSpec* AppConfig::find(std::string_view role) const {
  for (const auto& e : endpoints) {
    if (e.role == role) return &e.spec;
  }
  return nullptr;
}

const EndpointSpec& AppConfig::endpoint(std::string_view role) const {
  if (const auto* ep = find(role)) return *ep;
  invalid("no endpoint with role '" + std::string(role) + "'");
}

GameEndpoints AppConfig::game_endpoints() const {
  return {endpoint(kRoleGenerator), endpoint(kRoleExternal), endpoint(kRoleIntegrator),
          endpoint(kRoleAttacker)};
}

SimBackend AppConfig::sim_backend() const {
  SimBackend b;
  b.mode = sim;
  if (sim == SimMode::kEmbeddingCosine) b.embedding_endpoint = endpoint(kRoleEmbedding);
  return b;
}

ClientOptions AppConfig::client_options() const {
  ClientOptions o;
  o.retry = retry;
  o.cache_enabled = cache_enabled;
  o.cache_dir = cache_dir;
  o.extra_secrets = extra_secrets;
  return o;
}

Json AppConfig::snapshot() const {
  Json eps = Json::array();
  for (const auto& e : endpoints) {
    Json j = e.spec;
    j["role"] = e.role;
    eps.push_back(std::move(j));
  }
  return Json{
      {"endpoints", eps},
      {"game", game},
      {"sim", {{"mode", to_string(sim)}}},
      {"decoding", decoding},
      {"paths", {{"run_dir", run_dir.string()}, {"cache_dir", cache_dir.string()}}},
      {"cache", {{"enabled", cache_enabled}}},
      {"seed", seed},
      {"privacy", {{"extra_secrets", extra_secrets}}},
      {"retry",
       {{"max_attempts", retry.max_attempts},
        {"base_delay_ms", retry.base_delay.count()},
        {"multiplier", retry.multiplier},
        {"max_delay_ms", retry.max_delay.count()}}},
      {"eval", {{"pool_size", eval.size}, {"decoy_threshold", eval.decoy_threshold}}},
      {"dataset",
       {{"pairs_per_doc", dataset.pairs_per_doc},
        {"score_threshold", dataset.score_threshold},
        {"dup_threshold", dataset.dup_threshold},
        {"split_ratio", dataset.split_ratio},
        {"workers", dataset.workers},
        {"domain", to_string(dataset.domain)}}},
  };
}

std::string AppConfig::digest() const { return sha256_hex(snapshot().dump()); }

AppConfig config_from_json(const Json& j) {
  if (!j.is_object()) invalid("config must be a JSON object");
  static const std::set<std::string> sections{"endpoints", "game",    "sim",   "decoding",
                                              "paths",     "cache",   "seed",  "privacy",
                                              "retry",     "eval",    "dataset", "trainer"};
  for (const auto& [key, _] : j.items()) {
    if (!sections.count(key)) invalid("unknown config section '" + key + "'");
  }

  AppConfig c;
  try {
    for (const auto& e : j.value("endpoints", Json::array())) {
      RoleEndpoint re;
      re.role = e.at("role").get<std::string>();
      re.spec = e.get<EndpointSpec>();
      c.endpoints.push_back(std::move(re));
    }
    if (j.contains("game")) c.game = j["game"].get<GameConfig>();
    if (j.contains("sim")) c.sim = sim_mode_from_string(j["sim"].value("mode", to_string(c.sim)));
    if (j.contains("decoding")) c.decoding = j["decoding"].get<DecodingParams>();
    if (j.contains("paths")) {
      c.run_dir = j["paths"].value("run_dir", c.run_dir.string());
      c.cache_dir = j["paths"].value("cache_dir", c.cache_dir.string());
    }
    if (j.contains("cache")) c.cache_enabled = j["cache"].value("enabled", c.cache_enabled);
    c.seed = j.value("seed", c.seed);
    if (j.contains("privacy")) {
      c.extra_secrets = j["privacy"].value("extra_secrets", std::vector<std::string>{});
    }
    if (j.contains("retry")) {
      const auto& r = j["retry"];
      c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
      c.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", c.retry.base_delay.count()));
      c.retry.multiplier = r.value("multiplier", c.retry.multiplier);
      c.retry.max_delay = std::chrono::milliseconds(r.value("max_delay_ms", c.retry.max_delay.count()));
    }
    if (j.contains("eval")) {
      c.eval.size = j["eval"].value("pool_size", c.eval.size);
      c.eval.decoy_threshold = j["eval"].value("decoy_threshold", c.eval.decoy_threshold);
    }
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      c.dataset.pairs_per_doc = d.value("pairs_per_doc", c.dataset.pairs_per_doc);
      c.dataset.score_threshold = d.value("score_threshold", c.dataset.score_threshold);
      c.dataset.dup_threshold = d.value("dup_threshold", c.dataset.dup_threshold);
      c.dataset.split_ratio = d.value("split_ratio", c.dataset.split_ratio);
      c.dataset.workers = d.value("workers", c.dataset.workers);
      c.dataset.domain = domain_tag_from_string(d.value("domain", std::string("other")));
    }
  } catch (const Json::exception& e) {
    invalid(std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigInvalid) throw;
    invalid(std::string("config: ") + e.what());
  }
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    invalid("cannot read config " + path.string() + ": " + e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    invalid("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

AppConfig default_mock_config() {
  AppConfig c;
  auto add = [&](std::string_view role, const std::string& id, Trust trust, const std::string& model) {
    EndpointSpec ep;
    if (role == kRoleEmbedding) ep.kind = EndpointKind::kEmbedding;
    ep.id = id;
    ep.base_url = "mock://" + id;
    ep.trust = trust;
    ep.model_name = model;
    ep.max_concurrency = 4;
    ep.requests_per_second = 1000.0;
    c.endpoints.push_back({std::string(role), ep});
  };
  add(kRoleGenerator, "local-generator", Trust::kTrusted, "mock-generator");
  add(kRoleExternal, "external-llm", Trust::kUntrusted, "mock-external");
  add(kRoleIntegrator, "local-integrator", Trust::kTrusted, "mock-integrator");
  add(kRoleAttacker, "local-attacker", Trust::kTrusted, "mock-attacker");
  add(kRoleEmbedding, "local-embedder", Trust::kTrusted, "mock-embedder");
  add(kRoleJudge, "judge", Trust::kUntrusted, "mock-judge");
  add(kRoleQaGenerator, "qa-writer", Trust::kUntrusted, "mock-qa-writer");
  c.game.batch_size = 8;
  c.game.workers = 4;
  c.game.T = 2;
  c.game.handshake_timeout = std::chrono::seconds(5);
  c.game.handshake_poll = std::chrono::milliseconds(20);
  c.retry.base_delay = std::chrono::milliseconds(1);
  c.retry.max_delay = std::chrono::milliseconds(10);
  c.eval.size = 4;
  return c;
}

}  // namespace privq
