#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pagectx/corpus.hpp"
#include "pagectx/encoder.hpp"
#include "pagectx/params.hpp"

namespace pagectx {

struct TrainConfig {
  std::size_t epochs = 6;
  std::size_t batch_size = 32;
  /// 2e-5 is the fine-tuning rate for pre-trained encoders; encoders trained
  /// from scratch here default to 1e-3.
  double peak_lr = 1e-3;
  double warmup_fraction = 0.10;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  /// 6 epochs, batch 32, peak 2e-5, 10% linear warmup then linear decay.
  static TrainConfig fine_tuning_recipe();

  void validate() const;
  nlohmann::json to_json() const;
  /// `prefix` names the enclosing config section in error messages.
  static TrainConfig from_json(const nlohmann::json& j, const std::string& prefix = "train");
};

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg);

/// Linear ramp 0 -> peak over the warmup steps, then linear decay to 0 at
/// total_steps. Update number s (0-based) uses lr_at(s, ...).
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(const ParamSet& layout, const TrainConfig& cfg);

  /// params <- params - lr * wd * params, then the bias-corrected Adam update.
  /// Throws DivergenceError if any gradient entry is not finite.
  void step(ParamSet& params, const ParamSet& grads, double lr);

  std::size_t steps_taken() const { return t_; }
  const ParamSet& first_moment() const { return m_; }
  const ParamSet& second_moment() const { return v_; }

 private:
  double beta1_, beta2_, epsilon_, weight_decay_;
  ParamSet m_, v_;
  std::size_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double train_macro_f1 = 0.0;
  std::optional<double> validation_macro_f1;
};

struct TrainReport {
  bool recurrent = false;
  std::size_t examples = 0;
  std::size_t total_steps = 0;
  std::vector<double> step_losses;
  std::vector<double> step_lrs;
  std::vector<EpochMetrics> epochs;
  double wall_seconds = 0.0;  // not part of to_json(), which must be reproducible
  Encoder encoder;

  nlohmann::json to_json() const;
};

/// Steps = epochs * ceil(examples / batch_size).
std::size_t total_training_steps(std::size_t examples, const TrainConfig& cfg);

/// Trains a fresh encoder. recurrent = true builds teacher-forced examples,
/// false plain page examples; everything else (init, shuffling, schedule,
/// optimizer, metrics) is shared. Validation documents, when given, are scored
/// after every epoch with the matching inference procedure. Throws
/// DivergenceError with the step index on a non-finite loss.
TrainReport train(const EncoderConfig& encoder_config, const InputVocabulary& vocab,
                  const std::vector<DocumentSequence>& train_docs, LabelMode mode, bool recurrent,
                  const TrainConfig& cfg, const std::vector<DocumentSequence>* validation_docs = nullptr);

}  // namespace pagectx
