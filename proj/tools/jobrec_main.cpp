// jobrec: two-stage skill-aware job recommendation toolkit.
//
// Subcommands: synth, validate, train-recall, eval-recall, train-rank,
// eval-rank, recommend. Exit code 0 on success; on failure a single
// machine-parsable "error: ..." line goes to stderr. The JOBREC_OUT
// environment variable overrides any --out directory.

#include "jobrec/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

namespace {

using namespace jobrec;

std::string resolve_out(const std::string& flag_value) {
  if (const char* env = std::getenv("JOBREC_OUT"); env && *env) return env;
  return flag_value;
}

RunConfig load_config(const std::string& config_path,
                      const std::vector<std::string>& sets,
                      const std::string& seed_override) {
  RunConfig cfg = config_path.empty() ? RunConfig::defaults()
                                      : RunConfig::load(config_path);
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw DomainError("--set expects key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!seed_override.empty()) {
    cfg.set("train.seed", seed_override);
    cfg.set("synth.seed", seed_override);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage skill-aware job recommendation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, seed_override;
  std::vector<std::string> sets;
  int workers = 1;
  app.add_option("--config", config_path, "config file (key = value sections)")
      ->expected(1);
  app.add_option("--seed", seed_override, "override train.seed and synth.seed");
  app.add_option("--set", sets, "override a config key, e.g. model.d=32");
  app.add_option("--workers", workers,
                 "upper bound on internal parallelism (1 = sequential)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* validate = app.add_subcommand("validate", "check dataset invariants");
  validate->add_option("--data", data_dir, "dataset directory")->required();

  auto* train_recall =
      app.add_subcommand("train-recall", "train the recall stage");
  train_recall->add_option("--data", data_dir, "dataset directory")->required();
  train_recall->add_option("--out", out_dir, "output directory")->required();

  std::string checkpoint_path, rank_checkpoint_path, candidates_path, user_id;
  std::string k_list;
  int top_k = 10;
  auto* eval_recall = app.add_subcommand(
      "eval-recall", "evaluate recall and emit the candidate-set file");
  eval_recall->add_option("--checkpoint", checkpoint_path, "recall checkpoint")
      ->required();
  eval_recall->add_option("--data", data_dir, "dataset directory")->required();
  eval_recall->add_option("--out", out_dir, "output directory")->required();
  eval_recall->add_option("--k", k_list, "comma-separated K values");

  auto* train_rank = app.add_subcommand("train-rank", "train the CTR ranker");
  train_rank->add_option("--data", data_dir, "dataset directory")->required();
  train_rank
      ->add_option("--recall-checkpoint", checkpoint_path, "recall checkpoint")
      ->required();
  train_rank->add_option("--out", out_dir, "output directory")->required();

  auto* eval_rank = app.add_subcommand("eval-rank", "evaluate CTR ranking");
  eval_rank
      ->add_option("--recall-checkpoint", checkpoint_path, "recall checkpoint")
      ->required();
  eval_rank
      ->add_option("--rank-checkpoint", rank_checkpoint_path, "rank checkpoint")
      ->required();
  eval_rank->add_option("--candidates", candidates_path, "candidate-set file")
      ->required();
  eval_rank->add_option("--data", data_dir, "dataset directory")->required();
  eval_rank->add_option("--out", out_dir, "output directory")->required();

  auto* recommend =
      app.add_subcommand("recommend", "ranked recommendations for one user");
  recommend
      ->add_option("--recall-checkpoint", checkpoint_path, "recall checkpoint")
      ->required();
  recommend
      ->add_option("--rank-checkpoint", rank_checkpoint_path, "rank checkpoint")
      ->required();
  recommend->add_option("--data", data_dir, "dataset directory")->required();
  recommend->add_option("--user", user_id, "user id")->required();
  recommend->add_option("--k", top_k, "number of recommendations");
  recommend->add_option("--out", out_dir, "output directory")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    (void)workers;  // current implementation is sequential; 1 is the bound
    RunConfig cfg = load_config(config_path, sets, seed_override);
    if (synth->parsed()) {
      cmd_synth(cfg, resolve_out(out_dir));
      std::cout << "wrote dataset to " << resolve_out(out_dir) << "\n";
    } else if (validate->parsed()) {
      auto report = cmd_validate(cfg, data_dir);
      for (const auto& v : report.violations)
        std::cout << v.record_id << ": " << v.message << "\n";
      std::cout << (report.ok() ? "dataset valid" : "dataset invalid") << " ("
                << report.violations.size() << " violations)\n";
      return report.ok() ? 0 : 1;
    } else if (train_recall->parsed()) {
      auto result = cmd_train_recall(cfg, data_dir, resolve_out(out_dir));
      std::cout << "best epoch " << result.best_epoch << " recall@20 "
                << format_fixed(result.best_recall20) << "\n";
    } else if (eval_recall->parsed()) {
      std::vector<int> ks;
      if (!k_list.empty()) {
        RunConfig tmp = cfg;
        tmp.set("eval.k_values", k_list);
        ks = tmp.get_int_list("eval.k_values");
      }
      auto out = cmd_eval_recall(cfg, checkpoint_path, data_dir,
                                 resolve_out(out_dir), ks);
      std::cout << out.report.at("metrics").dump() << "\n";
    } else if (train_rank->parsed()) {
      auto result = cmd_train_rank(cfg, data_dir, checkpoint_path,
                                   resolve_out(out_dir));
      std::cout << "best epoch " << result.best_epoch << " auc "
                << format_fixed(result.best_auc) << "\n";
    } else if (eval_rank->parsed()) {
      auto out = cmd_eval_rank(cfg, checkpoint_path, rank_checkpoint_path,
                               candidates_path, data_dir, resolve_out(out_dir));
      std::cout << "auc " << format_fixed(out.metrics.auc) << " mrr "
                << format_fixed(out.metrics.mrr) << "\n";
    } else if (recommend->parsed()) {
      auto report = cmd_recommend(cfg, checkpoint_path, rank_checkpoint_path,
                                  data_dir, user_id, top_k,
                                  resolve_out(out_dir));
      std::cout << report.dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
