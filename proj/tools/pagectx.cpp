// pagectx: command-line front end.
//
// Exit codes: 0 success, 1 runtime error, 2 invalid configuration / usage /
// malformed input, 3 training divergence.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "pagectx/checkpoint.hpp"
#include "pagectx/commands.hpp"
#include "pagectx/error.hpp"

namespace fs = std::filesystem;
using namespace pagectx;

namespace {

struct ExperimentFlags {
  std::string config;
  std::optional<std::string> mode;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool no_baselines = false;

  void attach(CLI::App* cmd, bool with_mode) {
    cmd->add_option("-c,--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    if (with_mode) cmd->add_option("--mode", mode, "oblivious | recurrent (overrides config)");
    cmd->add_option("-o,--out", output_dir, "output directory (overrides config)");
    cmd->add_option("--seed", seed, "seed (overrides config)");
    if (with_mode) {
      cmd->add_option("--epochs", epochs, "training epochs (overrides config)");
      cmd->add_flag("--no-baselines", no_baselines, "skip the CRF and BiLSTM baselines");
    }
  }

  ExperimentConfig load() const {
    auto cfg = ExperimentConfig::load(config);
    if (mode) cfg.set_mode(*mode);
    if (output_dir) cfg.output_dir = *output_dir;
    if (seed) cfg.set_seed(*seed);
    if (epochs) cfg.train.epochs = *epochs;
    if (no_baselines) cfg.crf = cfg.bilstm = false;
    cfg.validate();
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Page-sequence classification with recurrence tokens"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));

  ExperimentFlags synth_flags, train_flags;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_flags.attach(synth, false);

  auto* train = app.add_subcommand("train", "train an encoder (and optional CRF / BiLSTM baselines)");
  train_flags.attach(train, true);

  InferRequest infer_req;
  std::optional<std::string> infer_crf, infer_mode;
  auto* infer = app.add_subcommand("infer", "run sequential inference and write a trace file");
  infer->add_option("--checkpoint", infer_req.checkpoint, "encoder or BiLSTM checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  infer->add_option("--crf", infer_crf, "CRF checkpoint decoding the encoder's scores")->check(CLI::ExistingFile);
  infer->add_option("--corpus", infer_req.manifest, "corpus manifest")->required()->check(CLI::ExistingFile);
  infer->add_option("--split", infer_req.split, "train | validation | test")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  infer->add_option("--mode", infer_mode, "oblivious | recurrent; must match the checkpoint");
  infer->add_option("--threads", infer_req.threads, "documents processed concurrently")->check(CLI::PositiveNumber);
  infer->add_option("-o,--out", infer_req.output, "trace JSONL path")->required();

  fs::path eval_traces, eval_manifest;
  std::string eval_split = "test";
  std::optional<fs::path> eval_json;
  auto* eval = app.add_subcommand("eval", "score a trace file against the gold labels");
  eval->add_option("--traces", eval_traces, "trace JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", eval_manifest, "corpus manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", eval_split)->check(CLI::IsMember({"train", "validation", "test"}));
  eval->add_option("--json", eval_json, "write the report as JSON");

  fs::path cmp_first, cmp_second, cmp_manifest;
  std::string cmp_split = "test";
  std::optional<fs::path> cmp_json;
  auto* compare = app.add_subcommand("compare", "compare two trace files (McNemar-Bowker)");
  compare->add_option("first", cmp_first, "first trace JSONL")->required()->check(CLI::ExistingFile);
  compare->add_option("second", cmp_second, "second trace JSONL")->required()->check(CLI::ExistingFile);
  compare->add_option("--corpus", cmp_manifest, "corpus manifest")->required()->check(CLI::ExistingFile);
  compare->add_option("--split", cmp_split)->check(CLI::IsMember({"train", "validation", "test"}));
  compare->add_option("--json", cmp_json, "write the report as JSON");

  fs::path stats_manifest;
  std::optional<fs::path> stats_json;
  auto* stats = app.add_subcommand("stats", "class counts, run lengths and self-transition probabilities");
  stats->add_option("--corpus", stats_manifest, "corpus manifest")->required()->check(CLI::ExistingFile);
  stats->add_option("--json", stats_json, "write the statistics as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) {
      cmd_synth(synth_flags.load(), std::cout);
    } else if (*train) {
      const auto out = cmd_train(train_flags.load(), std::cout);
      std::cout << "run directory " << out.run_dir.string() << '\n';
    } else if (*infer) {
      if (infer_crf) infer_req.crf = *infer_crf;
      infer_req.mode = infer_mode;
      cmd_infer(infer_req, std::cout);
    } else if (*eval) {
      cmd_eval(eval_traces, eval_manifest, eval_split, eval_json, std::cout);
    } else if (*compare) {
      cmd_compare(cmp_first, cmp_second, cmp_manifest, cmp_split, cmp_json, std::cout);
    } else if (*stats) {
      const auto j = cmd_stats(stats_manifest, std::cout);
      if (stats_json) write_json_file(*stats_json, j);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}
