#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "privq/config.hpp"
#include "privq/error.hpp"
#include "privq/llm_client.hpp"
#include "privq/mock_backend.hpp"

namespace privq {

/// Counts what actually leaves for untrusted endpoints, whatever the
/// underlying transport. Used for the guard audit in run reports.
class AuditTransport : public Transport {
 public:
  explicit AuditTransport(std::shared_ptr<Transport> inner) : inner_(std::move(inner)) {}
  HttpResponse post(const EndpointSpec& endpoint, const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& headers) override;
  HttpResponse get(const EndpointSpec& endpoint, const std::string& path) override;

  std::size_t untrusted_requests() const;
  /// Untrusted bodies whose normalized form (or any message content) contains `text`.
  std::size_t untrusted_containing(const std::string& text) const;

 private:
  std::shared_ptr<Transport> inner_;
  mutable std::mutex mu_;
  std::vector<std::string> untrusted_bodies_;
};

/// Installs the role-aware mock responders for every endpoint in `cfg`.
void install_mock_responders(MockBackend& backend, const AppConfig& cfg);

struct CommandContext {
  AppConfig config;
  bool mock = false;
  std::string run_id;  // empty: derived from the command and time
  bool resume = false;
  std::ostream* out = nullptr;
  // Tests may route every request through their own transport.
  std::shared_ptr<Transport> transport;
};

struct AskResult {
  std::string answer;
  Json report;
  std::filesystem::path run_path;
};

AskResult cmd_ask(CommandContext& ctx, const std::string& query_text,
                  DomainTag domain = DomainTag::kOther);

RunManifest cmd_train(CommandContext& ctx, const std::filesystem::path& dataset_path);

/// method "decomposition" attacks a generated sub-query group; "raw" attacks
/// the query text itself as a no-protection baseline.
Json cmd_attack_eval(CommandContext& ctx, const std::filesystem::path& eval_path,
                     std::optional<int> pool_size, const std::vector<int>& k_list,
                     const std::string& method = "decomposition");

Json cmd_dataset_build(CommandContext& ctx, const std::filesystem::path& docs_path);

Json cmd_metrics(CommandContext& ctx, const std::filesystem::path& candidates,
                 const std::filesystem::path& references);

/// 2 for input and configuration problems, 3 for runtime failures.
int exit_code_for(ErrorCode code);

}  // namespace privq
