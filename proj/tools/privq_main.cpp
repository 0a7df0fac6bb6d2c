// privq: privacy-preserving query decomposition, training rounds and evaluation.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "privq/commands.hpp"
#include "privq/config.hpp"
#include "privq/error.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"privq: query decomposition under a privacy-utility reward"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool mock = false;
  std::string resume;
  std::string run_id;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_flag("--mock", mock, "Use in-process mock backends for every endpoint");
  app.add_option("--resume", resume, "Resume the run with this id");
  app.add_option("--run-id", run_id, "Name of the run directory");

  auto* ask = app.add_subcommand("ask", "Answer one query through a generated sub-query group");
  std::string query;
  std::string ask_domain = "other";
  ask->add_option("query", query, "Query text")->required();
  ask->add_option("--domain", ask_domain, "biomedical, legal or other");

  auto* train = app.add_subcommand("train", "Run the alternating training rounds");
  std::string dataset;
  train->add_option("dataset", dataset, "Training queries (JSON lines)")->required();

  auto* eval = app.add_subcommand("attack-eval", "Reconstruction attack evaluation (ASR@k, MRR)");
  std::string eval_set;
  std::optional<int> pool_size;
  std::vector<int> ks;
  std::string method = "decomposition";
  eval->add_option("eval_set", eval_set, "Evaluation queries (JSON lines)")->required();
  eval->add_option("-N,--pool-size", pool_size, "Candidates per pool");
  eval->add_option("-k,--k", ks, "Extra k values for ASR@k")->delimiter(',');
  eval->add_option("--method", method, "decomposition or raw")
      ->check(CLI::IsMember({"decomposition", "raw"}));

  auto* build = app.add_subcommand("dataset-build", "Generate, judge, filter and split QA pairs");
  std::string docs;
  build->add_option("docs", docs, "Source documents (JSON lines)")->required();

  auto* metrics = app.add_subcommand("metrics", "ROUGE-1/2/L, METEOR-lite and sim per line");
  std::string candidates, references;
  metrics->add_option("candidates", candidates, "One candidate per line")->required();
  metrics->add_option("references", references, "One reference per line")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    privq::CommandContext ctx;
    if (!config_path.empty()) {
      ctx.config = privq::load_config(config_path);
    } else if (mock) {
      ctx.config = privq::default_mock_config();
    } else if (metrics->parsed()) {
      ctx.config.sim = privq::SimMode::kRougeLF1;
    } else {
      std::cerr << "error: --config is required (or pass --mock)\n";
      return kExitValidation;
    }
    if (seed) ctx.config.seed = *seed;
    ctx.mock = mock;
    if (!resume.empty()) {
      if (!run_id.empty() && run_id != resume) {
        std::cerr << "error: --run-id and --resume name different runs\n";
        return kExitValidation;
      }
      ctx.resume = true;
      run_id = resume;
    }
    ctx.run_id = run_id;
    if (ctx.resume && !train->parsed()) {
      std::cerr << "error: --resume only applies to train\n";
      return kExitValidation;
    }

    if (ask->parsed()) {
      privq::cmd_ask(ctx, query, privq::domain_tag_from_string(ask_domain));
    } else if (train->parsed()) {
      privq::cmd_train(ctx, dataset);
    } else if (eval->parsed()) {
      privq::cmd_attack_eval(ctx, eval_set, pool_size, ks, method);
    } else if (build->parsed()) {
      privq::cmd_dataset_build(ctx, docs);
    } else if (metrics->parsed()) {
      privq::cmd_metrics(ctx, candidates, references);
    }
    return 0;
  } catch (const privq::Error& e) {
    std::cerr << "error [" << privq::to_string(e.code()) << "]: " << e.what() << "\n";
    return privq::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
