#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"
#include "ctrlsynth/error.hpp"
#include "ctrlsynth/trainer.hpp"
#include "manifest.hpp"

using namespace ctrlsynth;
using namespace ctrlsynth::cli;

namespace {

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const std::exception& e) {
    // ConfigError and anything else that stems from bad input.
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and verify controllable sequence synthesizers on a synthetic styled corpus"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CTRLSYNTH_VERSION);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the styled-sequence corpus");
  gen_cmd->add_option("--config", gen.config, "Corpus config JSON (defaults when omitted)");
  gen_cmd->add_option("--seed", gen.seed, "Overrides the config seed");
  gen_cmd->add_option("--out", gen.out, "Corpus JSON to write")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train one system and record it in the run manifest");
  train_cmd->add_option("--system", train.system, "BOT, SUP, VQS, VQR, HZI, HSI or CVAE")->required();
  train_cmd->add_option("--corpus", train.corpus, "Corpus JSON from gen-data")->required();
  train_cmd->add_option("--config", train.config, "Training config JSON (defaults when omitted)");
  train_cmd->add_option("--seed", train.seed, "Overrides the training seed");
  train_cmd->add_option("--out", train.out, "Run directory")->required();

  VerifyArgs verify;
  auto* verify_cmd = app.add_subcommand("verify", "Check the propositions on random instances");
  verify_cmd->add_option("--props", verify.props, "Comma list of 1,2,3,4,elbo")->delimiter(',');
  verify_cmd->add_option("--instances", verify.instances, "Random instances per check");
  verify_cmd->add_option("--seed", verify.seed, "Instance seed");
  verify_cmd->add_option("--out", verify.out, "Directory for verify_<prop>.json reports");
  verify_cmd->add_option("--run", verify.run, "Also re-encode with the HZI checkpoint of this run");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Write every report for a trained run");
  eval_cmd->add_option("--run", eval.run, "Run directory holding manifest.json")->required();
  eval_cmd->add_option("--schemes", eval.schemes, "Comma list of per-utterance,per-style")
      ->delimiter(',');
  eval_cmd->add_option("--knn-k", eval.knn_k, "Neighbours for the disagreement count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigFailure;
  }

  if (*gen_cmd) return run_guarded([&] { return cmd_gen_data(gen); });
  if (*train_cmd) return run_guarded([&] { return cmd_train(train); });
  if (*verify_cmd) return run_guarded([&] { return cmd_verify(verify); });
  return run_guarded([&] { return cmd_eval(eval); });
}
