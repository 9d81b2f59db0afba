#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/evaluation.hpp"
#include "ctrlsynth/io.hpp"
#include "ctrlsynth/synthdata.hpp"
#include "ctrlsynth/trainer.hpp"
#include "ctrlsynth/verifiers.hpp"
#include "manifest.hpp"

#ifndef CTRLSYNTH_VERSION
#define CTRLSYNTH_VERSION "unknown"
#endif

namespace ctrlsynth::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string checkpoint_name(SystemId id) { return std::string(system_name(id)) + ".checkpoint.json"; }
std::string curve_name(SystemId id) { return std::string(system_name(id)) + "_curve.csv"; }

}  // namespace

std::size_t thread_cap() {
  const char* env = std::getenv("CTRL_SYNTH_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) {
    throw ConfigError(std::string("CTRL_SYNTH_THREADS must be a positive integer, got '") + env +
                      "'");
  }
  return static_cast<std::size_t>(v);
}

int cmd_gen_data(const GenDataArgs& args) {
  CorpusConfig config;
  if (args.config) config = CorpusConfig::from_json(read_text_file(*args.config));
  if (args.seed) config.seed = *args.seed;
  config.validate();

  const StyleCorpus corpus = generate_corpus(config);
  save_corpus(corpus, args.out);
  std::cout << "sequences " << corpus.sequences.size() << "\n"
            << "mse_floor " << fmt(mse_floor(config)) << "\n"
            << "between_style_gap " << fmt(between_style_gap(config)) << "\n";
  return kOk;
}

int cmd_train(const TrainArgs& args) {
  const SystemId id = parse_system(args.system);
  TrainConfig config;
  if (args.config) config = TrainConfig::from_json(read_text_file(*args.config));
  if (args.seed) config.seed = *args.seed;
  config.threads = thread_cap();
  config.validate();

  const fs::path corpus_path = fs::absolute(args.corpus).lexically_normal();
  const std::string corpus_sha = sha256_file(corpus_path);
  const StyleCorpus corpus = load_corpus(corpus_path, TruthAccess::kWithout);

  // Refuse to mix corpora inside one run directory.
  const fs::path mpath = manifest_path(args.out);
  if (fs::exists(mpath)) {
    const auto existing = RunManifest::from_json(read_text_file(mpath));
    if (!existing.corpus_sha256.empty() && existing.corpus_sha256 != corpus_sha) {
      throw ConfigError("run directory " + args.out.string() + " was trained on another corpus");
    }
  }

  const auto start = std::chrono::steady_clock::now();
  const Checkpoint ckpt = train_system(make_system_spec(id, corpus.config, config), corpus, config);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path ckpt_path = args.out / checkpoint_name(id);
  const fs::path curve_path = args.out / curve_name(id);
  save_checkpoint(ckpt, ckpt_path);
  write_text_file(curve_path, learning_curve_csv(ckpt.history));

  update_manifest(args.out, [&](RunManifest& m) {
    if (!m.corpus_sha256.empty() && m.corpus_sha256 != corpus_sha) {
      throw ConfigError("run directory " + args.out.string() + " was trained on another corpus");
    }
    m.tool_version = CTRLSYNTH_VERSION;
    m.corpus_path = corpus_path.string();
    m.corpus_sha256 = corpus_sha;
    m.systems[system_name(id)] = SystemEntry{checkpoint_name(id),
                                             sha256_file(ckpt_path),
                                             curve_name(id),
                                             sha256_file(curve_path),
                                             sha256_hex(config.to_json()),
                                             seconds};
  });

  const EpochRecord& best = ckpt.best();
  std::cout << "system " << system_name(id) << " best_epoch " << best.epoch << " epochs_run "
            << ckpt.history.size() << " train_mse " << fmt(best.train_mse) << " val_mse "
            << fmt(best.val_mse) << " test_mse " << fmt(best.test_mse) << " seconds "
            << fmt(seconds) << "\n";
  return kOk;
}

int cmd_verify(const VerifyArgs& args) {
  const VerifierOptions opt{args.instances, args.seed};
  std::vector<PropositionReport> reports;
  for (const std::string& p : args.props) {
    if (p == "1") {
      reports.push_back(verify_prop1(opt));
    } else if (p == "2") {
      reports.push_back(verify_prop2(opt));
    } else if (p == "3") {
      reports.push_back(verify_prop3(opt));
    } else if (p == "4") {
      reports.push_back(verify_prop4(opt));
    } else if (p == "elbo") {
      reports.push_back(verify_elbo_decomposition(opt));
    } else {
      throw ConfigError("unknown proposition '" + p + "' (expected 1, 2, 3, 4 or elbo)");
    }
  }
  if (args.run) {
    const RunManifest m = load_verified_manifest(*args.run);
    const auto it = m.systems.find("HZI");
    if (it == m.systems.end()) throw MissingArtifactError("HZI checkpoint missing from run");
    Checkpoint ckpt = load_checkpoint(*args.run / it->second.checkpoint);
    const StyleCorpus corpus = load_corpus(m.corpus_path, TruthAccess::kWithout);
    reports.push_back(verify_prop3_trained(ckpt.model, corpus, ckpt.config.latent_lr, 50));
  }

  bool all_pass = true;
  for (const auto& r : reports) {
    const std::string json = r.to_json();
    std::cout << json << "\n";
    if (args.out) write_text_file(*args.out / ("verify_" + r.proposition + ".json"), json + "\n");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? kOk : kPropositionFailure;
}

int cmd_eval(const EvalArgs& args) {
  EvalOptions options;
  options.knn_k = args.knn_k;
  options.schemes.clear();
  for (const auto& s : args.schemes) options.schemes.push_back(parse_control_scheme(s));

  const RunManifest m = load_verified_manifest(args.run);
  for (SystemId id : headline_systems()) {
    if (!m.systems.contains(system_name(id))) {
      throw MissingArtifactError(std::string(system_name(id)) + " checkpoint missing from " +
                                 manifest_path(args.run).string());
    }
  }
  std::vector<Checkpoint> checkpoints;
  for (SystemId id : headline_systems()) {
    checkpoints.push_back(load_checkpoint(args.run / m.systems.at(system_name(id)).checkpoint));
  }
  // Extra systems (e.g. CVAE) join the report when present.
  for (const auto& [name, entry] : m.systems) {
    const SystemId id = parse_system(name);
    if (std::find(headline_systems().begin(), headline_systems().end(), id) ==
        headline_systems().end()) {
      checkpoints.push_back(load_checkpoint(args.run / entry.checkpoint));
    }
  }
  const StyleCorpus corpus = load_corpus(m.corpus_path, TruthAccess::kWith);

  const EvalReport report = evaluate_run(checkpoints, corpus, options);
  for (const auto& [name, content] : report.files) {
    write_text_file(args.run / "reports" / name, content);
  }
  std::cout << report.summary;
  return kOk;
}

}  // namespace ctrlsynth::cli
