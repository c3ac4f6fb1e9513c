#include "pagectx/training.hpp"

#include <chrono>
#include <cmath>
#include <set>

#include "pagectx/error.hpp"
#include "pagectx/eval.hpp"
#include "pagectx/random.hpp"
#include "pagectx/recurrence.hpp"

namespace pagectx {

using nlohmann::json;

TrainConfig TrainConfig::fine_tuning_recipe() {
  TrainConfig c;
  c.epochs = 6;
  c.batch_size = 32;
  c.peak_lr = 2e-5;
  c.warmup_fraction = 0.10;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw FormatError(field + ": " + why); };
  if (epochs < 1) fail("epochs", "must be at least 1");
  if (batch_size < 1) fail("batch_size", "must be at least 1");
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) fail("peak_lr", "must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon", "must be positive");
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size}, {"peak_lr", peak_lr},
          {"warmup_fraction", warmup_fraction}, {"weight_decay", weight_decay}, {"beta1", beta1},
          {"beta2", beta2},           {"epsilon", epsilon},       {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j, const std::string& prefix) {
  static const std::set<std::string> known = {"epochs", "batch_size", "peak_lr", "warmup_fraction", "weight_decay",
                                               "beta1",  "beta2",      "epsilon", "seed"};
  if (!j.is_object()) throw FormatError(prefix + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError(prefix + "." + key + ": unknown field");
  TrainConfig c;
  auto field = [&](const char* name, auto& dst) {
    if (!j.contains(name)) return;
    try {
      j.at(name).get_to(dst);
    } catch (const json::exception& e) {
      throw FormatError(prefix + "." + name + ": " + e.what());
    }
  };
  // Negative integers would wrap in size_t; reject them by name first.
  for (const char* name : {"epochs", "batch_size"})
    if (j.contains(name) && j.at(name).is_number_integer() && j.at(name).get<long long>() < 1)
      throw FormatError(prefix + "." + name + ": must be at least 1");
  field("epochs", c.epochs);
  field("batch_size", c.batch_size);
  field("peak_lr", c.peak_lr);
  field("warmup_fraction", c.warmup_fraction);
  field("weight_decay", c.weight_decay);
  field("beta1", c.beta1);
  field("beta2", c.beta2);
  field("epsilon", c.epsilon);
  field("seed", c.seed);
  try {
    c.validate();
  } catch (const FormatError& e) {
    throw FormatError(prefix + "." + e.what());
  }
  return c;
}

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg) {
  return static_cast<std::size_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total_steps)));
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) throw Error("schedule step beyond total_steps");
  const auto warmup = warmup_steps(total_steps, cfg);
  // Ratio first so the peak and the endpoints are hit exactly.
  if (step < warmup) return cfg.peak_lr * (static_cast<double>(step) / static_cast<double>(warmup));
  if (total_steps == warmup) return 0.0;
  return cfg.peak_lr * (static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup));
}

AdamW::AdamW(const ParamSet& layout, const TrainConfig& cfg)
    : beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      epsilon_(cfg.epsilon),
      weight_decay_(cfg.weight_decay),
      m_(layout.zeros_like()),
      v_(layout.zeros_like()) {}

void AdamW::step(ParamSet& params, const ParamSet& grads, double lr) {
  if (!params.same_layout(m_) || !grads.same_layout(m_)) throw Error("optimizer step with mismatched layouts");
  if (!grads.all_finite()) throw DivergenceError("non-finite gradient at optimizer step " + std::to_string(t_), t_);
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    if (weight_decay_ != 0.0) p *= 1.0 - lr * weight_decay_;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + epsilon_);
  }
}

// ---------------------------------------------------------------------------

std::size_t total_training_steps(std::size_t examples, const TrainConfig& cfg) {
  return cfg.epochs * ((examples + cfg.batch_size - 1) / cfg.batch_size);
}

json TrainReport::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    json ej = {{"epoch", e.epoch},
               {"mean_loss", e.mean_loss},
               {"train_accuracy", e.train_accuracy},
               {"train_macro_f1", e.train_macro_f1}};
    ej["validation_macro_f1"] = e.validation_macro_f1 ? json(*e.validation_macro_f1) : json(nullptr);
    epochs_json.push_back(std::move(ej));
  }
  return {{"recurrent", recurrent},     {"examples", examples}, {"total_steps", total_steps},
          {"step_losses", step_losses}, {"step_lrs", step_lrs}, {"epochs", epochs_json}};
}

TrainReport train(const EncoderConfig& encoder_config, const InputVocabulary& vocab,
                  const std::vector<DocumentSequence>& train_docs, LabelMode mode, bool recurrent,
                  const TrainConfig& cfg, const std::vector<DocumentSequence>* validation_docs) {
  cfg.validate();
  if (encoder_config.vocab_size != vocab.size() || encoder_config.n_classes != vocab.n_classes())
    throw Error("encoder config does not match the input vocabulary");
  const auto started = std::chrono::steady_clock::now();

  const auto max_len = encoder_config.max_len;
  const PageExamples data = recurrent ? teacher_forced_examples(train_docs, vocab, max_len)
                                      : page_examples(train_docs, vocab, max_len);
  if (data.size() == 0) throw Error("no training pages");

  TrainReport report;
  report.recurrent = recurrent;
  report.examples = data.size();
  report.total_steps = total_training_steps(data.size(), cfg);
  report.encoder = Encoder(encoder_config);
  Encoder& model = report.encoder;

  AdamW optimizer(model.params(), cfg);
  ParamSet grads = model.params().zeros_like();
  Rng shuffle_rng(mix_seed(cfg.seed, 1));
  Rng dropout_rng(mix_seed(cfg.seed, 2));
  const auto golds = [&] {
    std::vector<LabelSet> g;
    for (const auto& ex : data.examples) g.push_back(ex.gold);
    return g;
  }();

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    const auto batches = shuffled_batches(data.size(), cfg.batch_size, shuffle_rng);
    for (const auto& batch : batches) {
      double loss;
      try {
        loss = model.loss_and_grad(data.examples, batch, mode, grads, &dropout_rng);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what(), step);
      }
      const double lr = lr_at(step, report.total_steps, cfg);
      try {
        optimizer.step(model.params(), grads, lr);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what(), step);
      }
      report.step_losses.push_back(loss);
      report.step_lrs.push_back(lr);
      loss_sum += loss;
      ++step;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = loss_sum / static_cast<double>(batches.size());
    std::vector<LabelSet> preds;
    preds.reserve(data.size());
    for (const auto& ex : data.examples) preds.push_back(predict(model.forward(ex.input), mode));
    const auto train_scores = score(preds, golds, vocab.n_classes(), mode);
    m.train_accuracy = train_scores.accuracy;
    m.train_macro_f1 = train_scores.macro_f1;
    if (validation_docs && !validation_docs->empty()) {
      auto traces = infer_corpus(model, vocab, *validation_docs, mode, recurrent);
      m.validation_macro_f1 =
          score(decided_labels(traces), gold_labels(*validation_docs), vocab.n_classes(), mode).macro_f1;
    }
    report.epochs.push_back(m);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace pagectx
