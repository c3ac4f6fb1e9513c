#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "pagectx/encoder.hpp"
#include "pagectx/features.hpp"
#include "pagectx/params.hpp"
#include "pagectx/training.hpp"

namespace pagectx {

struct BiLstmConfig {
  std::size_t input_dim = 300;
  std::size_t hidden = 128;
  std::size_t n_classes = 2;
  std::uint64_t init_seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static BiLstmConfig from_json(const nlohmann::json& j, const std::string& prefix = "bilstm");
};

/// One document as page vectors plus multiclass gold labels.
struct PageVectorSequence {
  std::vector<PageVector> pages;
  std::vector<std::size_t> gold;
};

/// Single-layer bidirectional LSTM with a per-page linear head.
///
/// Each direction d in {fwd, bwd} has d.wx (4h x k), d.wh (4h x h), d.b (4h),
/// gate blocks stacked in the order i, f, g, o:
///   z = wx x_t + wh h_prev + b
///   c_t = sigmoid(z_f) * c_prev + sigmoid(z_i) * tanh(z_g)
///   h_t = sigmoid(z_o) * tanh(c_t)
/// fwd runs t = 1..l, bwd runs t = l..1, both from zero state.
/// logits_t = head.weight (n x 2h) [h_fwd_t; h_bwd_t] + head.bias.
class BiLstm {
 public:
  BiLstm() = default;
  explicit BiLstm(const BiLstmConfig& config);

  const BiLstmConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  std::vector<ScoreVector> forward(const std::vector<PageVector>& pages) const;

  /// Mean softmax cross-entropy over every page of the selected documents.
  /// Overwrites `grads`. Throws DivergenceError on a non-finite loss.
  double loss_and_grad(std::span<const PageVectorSequence> docs, std::span<const std::size_t> batch,
                       ParamSet& grads) const;

  /// Same weights with the two directions exchanged and the head halves
  /// swapped; on the reversed sequence it yields the reversed logits.
  BiLstm mirrored() const;

 private:
  BiLstmConfig config_;
  ParamSet params_;
};

struct BiLstmReport {
  std::size_t total_steps = 0;
  std::vector<double> step_losses;
  std::vector<double> step_lrs;
  double train_accuracy = 0.0;
  BiLstm model;

  nlohmann::json to_json() const;
};

/// Batches are documents (cfg.batch_size documents per update); schedule and
/// optimizer are the ones used for the encoders.
BiLstmReport bilstm_train(const std::vector<PageVectorSequence>& docs, const BiLstmConfig& config,
                          const TrainConfig& cfg);

/// Per-page argmax labels.
std::vector<std::size_t> bilstm_decode(const BiLstm& model, const std::vector<PageVector>& pages);

}  // namespace pagectx
