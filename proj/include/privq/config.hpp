#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "privq/core.hpp"
#include "privq/datasetpipe.hpp"
#include "privq/game.hpp"
#include "privq/llm_client.hpp"
#include "privq/privacyeval.hpp"
#include "privq/textmetrics.hpp"

namespace privq {

// Endpoint roles. The first four are required exactly once.
inline constexpr std::string_view kRoleGenerator = "generator";
inline constexpr std::string_view kRoleExternal = "external";
inline constexpr std::string_view kRoleIntegrator = "integrator";
inline constexpr std::string_view kRoleAttacker = "attacker";
inline constexpr std::string_view kRoleEmbedding = "embedding";
inline constexpr std::string_view kRoleJudge = "judge";
inline constexpr std::string_view kRoleQaGenerator = "qa_generator";

struct RoleEndpoint {
  std::string role;
  EndpointSpec spec;

  bool operator==(const RoleEndpoint&) const = default;
};

struct AppConfig {
  std::vector<RoleEndpoint> endpoints;
  GameConfig game;
  SimMode sim = SimMode::kEmbeddingCosine;
  DecodingParams decoding;
  std::filesystem::path run_dir = "runs";
  std::filesystem::path cache_dir = ".privq_cache";
  bool cache_enabled = true;
  std::uint64_t seed = 0;
  std::vector<std::string> extra_secrets;
  RetryPolicy retry;
  PoolOptions eval;
  PipelineOptions dataset;

  /// Topology and value checks; throws kConfigInvalid with the offending field.
  void validate() const;

  const EndpointSpec* find(std::string_view role) const;
  /// Throws kConfigInvalid when the role has no endpoint.
  const EndpointSpec& endpoint(std::string_view role) const;
  GameEndpoints game_endpoints() const;
  SimBackend sim_backend() const;
  ClientOptions client_options() const;

  /// Canonical JSON of every setting; the run digest is taken over it.
  Json snapshot() const;
  std::string digest() const;
};

/// Missing sections take defaults; unknown top-level keys are rejected.
AppConfig config_from_json(const Json& j);
AppConfig load_config(const std::filesystem::path& path);

/// Mock topology: the four game roles, a trusted mock embedder for
/// embedding_cosine sim, and a judge and QA writer for dataset builds.
AppConfig default_mock_config();

}  // namespace privq
