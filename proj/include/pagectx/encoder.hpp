#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pagectx/corpus.hpp"
#include "pagectx/features.hpp"
#include "pagectx/params.hpp"

namespace pagectx {

class Rng;

using TokenId = std::uint32_t;

/// Model input ids. Layout: CLS, then optional page-type tokens, then text.
struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// Per-class logits for one page.
using ScoreVector = Eigen::VectorXd;

/// Input-side vocabulary: reserved ids, one id per page-type token, then the
/// text vocabulary. Reserved and page-type ids can never be produced by text.
class InputVocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kFirstPage = 3;
  static constexpr TokenId kFirstClassToken = 4;

  InputVocabulary() = default;
  InputVocabulary(Vocabulary text, std::size_t n_classes);

  std::size_t size() const { return kFirstClassToken + n_classes_ + text_.size(); }
  std::size_t n_classes() const { return n_classes_; }
  const Vocabulary& text_vocabulary() const { return text_; }

  TokenId class_token(std::size_t c) const;
  /// kUnk for out-of-vocabulary tokens.
  TokenId text_token(std::string_view token) const;
  bool is_page_type_token(TokenId id) const { return id >= kFirstPage && id < text_offset(); }
  /// Readable form: "[CLS]", "[-1]", "[type_k]" or the text token.
  std::string token_string(TokenId id) const;

 private:
  TokenId text_offset() const { return static_cast<TokenId>(kFirstClassToken + n_classes_); }

  Vocabulary text_;
  std::size_t n_classes_ = 0;
};

enum class EncoderVariant { linear, tiny_transformer };

std::string_view to_string(EncoderVariant v);
EncoderVariant parse_encoder_variant(std::string_view s);

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::linear;
  std::size_t n_classes = 2;
  std::size_t vocab_size = 0;  // InputVocabulary::size()
  std::size_t d_model = 32;
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t ff_dim = 64;
  std::size_t max_len = 64;
  double dropout = 0.1;  // tiny-transformer only
  std::uint64_t init_seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

struct LabeledSequence {
  TokenSequence input;
  LabelSet gold;
};

/// Page scorer NN_theta: token sequence -> class logits.
///
/// linear: logits = mean_t(E[x_t]) W + b.
/// tiny_transformer: token + position embeddings, n_layers pre-norm blocks
/// (multi-head self-attention, GELU feed-forward), final layer norm, logits
/// read from the CLS position through the same W, b head.
class Encoder {
 public:
  Encoder() = default;
  /// Random initialization from config.init_seed.
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Deterministic; dropout is never applied here.
  ScoreVector forward(const TokenSequence& sequence) const;

  /// Mean cross-entropy over the selected examples. `grads` must share the
  /// parameter layout and is overwritten with the exact gradient. When
  /// `dropout_rng` is non-null and config.dropout > 0, dropout masks are drawn
  /// from it in example order. Throws DivergenceError naming the offending
  /// example when a loss is not finite.
  double loss_and_grad(std::span<const LabeledSequence> examples, std::span<const std::size_t> batch, LabelMode mode,
                       ParamSet& grads, Rng* dropout_rng = nullptr) const;
  double loss_and_grad(std::span<const LabeledSequence> examples, LabelMode mode, ParamSet& grads,
                       Rng* dropout_rng = nullptr) const;

 private:
  struct Target {
    const LabelSet* gold;
    LabelMode mode;
    double weight;
    ParamSet* grads;
    double loss = 0.0;
  };
  void check_sequence(const TokenSequence& sequence) const;
  ScoreVector run_linear(const TokenSequence& sequence, Target* target) const;
  ScoreVector run_transformer(const TokenSequence& sequence, Target* target, Rng* rng) const;

  EncoderConfig config_;
  ParamSet params_;
};

/// Decision rule. multiclass: argmax, lowest index on ties. multilabel:
/// {i : sigmoid(y_i) >= 0.5}, or the argmax singleton when that set is empty.
LabelSet predict(const ScoreVector& scores, LabelMode mode);

/// Cross-entropy of one example; writes d loss / d logits into `dlogits`
/// when non-null. multilabel loss is the mean over classes.
double cross_entropy(const ScoreVector& logits, const LabelSet& gold, LabelMode mode, ScoreVector* dlogits);

}  // namespace pagectx
