#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "pagectx/bilstm.hpp"
#include "pagectx/corpus.hpp"
#include "pagectx/crf.hpp"
#include "pagectx/encoder.hpp"
#include "pagectx/recurrence.hpp"
#include "pagectx/training.hpp"

namespace pagectx {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2, kExitDiverged = 3 };

/// Maps an exception thrown by a command to its exit code: DivergenceError 3,
/// FormatError (config, usage or malformed input) 2, anything else 1.
int exit_code_for(const std::exception& e);

/// Experiment file schema "pagectx-experiment/1". Every section is optional;
/// exactly one of corpus.manifest / corpus.synthetic is required.
///
///   {"format": "pagectx-experiment/1",
///    "corpus": {"manifest": path} | {"synthetic": SynthConfig},
///    "mode": "oblivious" | "recurrent",
///    "seed": int,
///    "encoder": {variant, d_model, n_layers, n_heads, ff_dim, max_len, dropout},
///    "features": {"vocab_cap": int},
///    "train": TrainConfig without seed,
///    "baselines": {"crf": bool, "bilstm": bool},
///    "crf": {"l2", "tolerance", "max_iterations"},
///    "bilstm": {"hidden", "svd_dims", "vocab_cap", "train": TrainConfig without seed},
///    "output_dir": path}
///
/// The top-level seed drives the synthetic corpus, initialization and
/// shuffling; sections may not set their own seeds.
struct ExperimentConfig {
  std::optional<std::filesystem::path> manifest;  // resolved against the config file's directory
  std::optional<SynthConfig> synthetic;
  bool recurrent = false;
  std::uint64_t seed = 1;
  EncoderConfig encoder;  // n_classes and vocab_size are filled from the corpus
  std::size_t vocab_cap = 60000;
  TrainConfig train;
  bool crf = false;
  bool bilstm = false;
  CrfFitOptions crf_options;
  std::size_t bilstm_hidden = 128;
  std::size_t bilstm_svd_dims = 300;
  std::size_t bilstm_vocab_cap = 60000;
  TrainConfig bilstm_train;
  std::filesystem::path output_dir = "runs";

  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Canonical form with every default filled in.
  nlohmann::json to_json() const;
  /// to_json() without output_dir; hashed into run ids and provenance
  /// headers, so artifacts do not depend on where they are written.
  nlohmann::json identity() const;
  void validate() const;
  std::string mode_name() const { return recurrent ? "recurrent" : "oblivious"; }
  /// "<mode>-<first 8 hex digits of the config hash>".
  std::string run_id() const;
  std::filesystem::path run_dir() const { return output_dir / run_id(); }

  /// Command-line overrides; the config is re-validated by the caller.
  void set_mode(const std::string& mode);
  void set_seed(std::uint64_t seed);
};

/// Corpus named by the config: loaded from the manifest or generated.
CorpusSplit resolve_corpus(const ExperimentConfig& config);

struct SynthOutcome {
  std::filesystem::path directory;
  CorpusSplit corpus;
};

/// Writes the synthetic corpus under <output_dir>/synth-<hash8>/ and prints
/// per-split class page counts and self-transition probabilities.
SynthOutcome cmd_synth(const ExperimentConfig& config, std::ostream& log);

struct TrainOutcome {
  std::filesystem::path run_dir;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> crf_checkpoint, bilstm_checkpoint;
  std::filesystem::path manifest;  // corpus the run was trained on
  TrainReport report;
};

/// Trains the configured encoder and, when toggled, the baselines. Artifacts
/// in <output_dir>/<run-id>/: config.json, checkpoint.json, report.json,
/// timing.json (wall clock, the only non-reproducible file), corpus/ for
/// synthetic sources, predictions-<split>.jsonl + crf.json with the CRF,
/// bilstm.json + bilstm-report.json with the BiLSTM.
TrainOutcome cmd_train(const ExperimentConfig& config, std::ostream& log);

struct InferRequest {
  std::filesystem::path checkpoint;  // encoder, or BiLSTM checkpoint
  std::optional<std::filesystem::path> crf;  // decode the encoder's scores with this CRF
  std::filesystem::path manifest;
  std::string split = "test";
  std::optional<std::string> mode;  // must agree with the checkpoint when given
  std::filesystem::path output;
  std::size_t threads = 1;
};

/// Writes one trace line per page (plus the provenance line) and returns the
/// traces.
std::vector<PredictionTrace> cmd_infer(const InferRequest& request, std::ostream& log);

/// Prints the per-class table; returns the JSON report (also written to
/// `json_out` when given).
nlohmann::json cmd_eval(const std::filesystem::path& traces, const std::filesystem::path& manifest,
                        const std::string& split, const std::optional<std::filesystem::path>& json_out,
                        std::ostream& log);

nlohmann::json cmd_compare(const std::filesystem::path& first, const std::filesystem::path& second,
                           const std::filesystem::path& manifest, const std::string& split,
                           const std::optional<std::filesystem::path>& json_out, std::ostream& log);

/// Class page counts, run-length statistics (multiclass) and self-transition
/// probabilities per split.
nlohmann::json cmd_stats(const std::filesystem::path& manifest, std::ostream& log);

}  // namespace pagectx
