#include <doctest.h>

#include <cmath>
#include <vector>

#include "pagectx/encoder.hpp"
#include "pagectx/error.hpp"
#include "pagectx/random.hpp"
#include "support.hpp"

using namespace pagectx;

namespace {

EncoderConfig small_config(EncoderVariant variant, std::size_t n_classes = 3) {
  EncoderConfig c;
  c.variant = variant;
  c.n_classes = n_classes;
  c.vocab_size = InputVocabulary::kFirstClassToken + n_classes + 9;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ff_dim = 12;
  c.max_len = 10;
  c.dropout = 0.0;
  c.init_seed = 4;
  return c;
}

TokenSequence seq(std::vector<TokenId> ids) { return TokenSequence{std::move(ids)}; }

// Sequences that exercise CLS, the first-page token, page-type tokens and text.
std::vector<LabeledSequence> gradient_examples(std::size_t n, LabelMode mode) {
  const TokenId text0 = static_cast<TokenId>(InputVocabulary::kFirstClassToken + n);
  std::vector<LabeledSequence> ex;
  ex.push_back({seq({InputVocabulary::kCls, InputVocabulary::kFirstPage, text0, text0 + 3, text0 + 1}), {0}});
  ex.push_back({seq({InputVocabulary::kCls, InputVocabulary::kFirstClassToken + 1, text0 + 2, InputVocabulary::kUnk}),
                {1}});
  ex.push_back({seq({InputVocabulary::kCls, InputVocabulary::kFirstClassToken, InputVocabulary::kFirstClassToken + 2,
                     text0 + 5, text0 + 8, text0 + 5}),
                {2}});
  ex.push_back({seq({InputVocabulary::kCls, text0 + 4}), {1}});
  if (mode == LabelMode::multilabel) {
    ex[0].gold = {0, 2};
    ex[2].gold = {1, 2};
  }
  return ex;
}

void perturb(ParamSet& params, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Eigen::MatrixXd noise(params[p].rows(), params[p].cols());
    fill_normal(noise, scale, rng);
    params[p] += noise;
  }
}

}  // namespace

TEST_CASE("input vocabulary") {
  auto text = Vocabulary::fit(std::vector<std::vector<std::string>>{{"court", "type_1", "court"}});
  InputVocabulary v(text, 3);
  CHECK(v.size() == 4 + 3 + 2);
  CHECK(v.token_string(InputVocabulary::kCls) == "[CLS]");
  CHECK(v.token_string(InputVocabulary::kFirstPage) == "[-1]");
  CHECK(v.token_string(v.class_token(0)) == "[type_1]");
  CHECK(v.token_string(v.class_token(2)) == "[type_3]");
  CHECK(v.text_token("missing") == InputVocabulary::kUnk);
  // A text token spelled like a page-type token still gets a text id.
  const auto id = v.text_token("type_1");
  CHECK_FALSE(v.is_page_type_token(id));
  CHECK(id >= InputVocabulary::kFirstClassToken + 3);
  CHECK(v.token_string(v.text_token("court")) == "court");
  CHECK_THROWS_AS(v.class_token(3), Error);
}

TEST_CASE("encoder config validation") {
  auto c = small_config(EncoderVariant::tiny_transformer);
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.n_heads = 3;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("encoder.n_heads"), FormatError);
  bad = c;
  bad.max_len = c.n_classes + 1;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("encoder.max_len"), FormatError);
  bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), FormatError);
  CHECK(EncoderConfig::from_json(c.to_json()) == c);
  auto j = c.to_json();
  j["bogus"] = 1;
  CHECK_THROWS_WITH_AS(EncoderConfig::from_json(j), doctest::Contains("encoder.bogus"), FormatError);
}

TEST_CASE("forward") {
  for (auto variant : {EncoderVariant::linear, EncoderVariant::tiny_transformer}) {
    CAPTURE(to_string(variant));
    Encoder enc(small_config(variant));
    const auto s = seq({InputVocabulary::kCls, 9, 10, 11});

    SUBCASE("zero head gives zero scores") {
      Encoder z = enc;
      z.params().at("head.weight").setZero();
      z.params().at("head.bias").setZero();
      CHECK(z.forward(s).isZero(0.0));
      CHECK(z.forward(seq({InputVocabulary::kCls, InputVocabulary::kFirstPage})).isZero(0.0));
    }
    SUBCASE("bit-reproducible") {
      const auto a = enc.forward(s);
      const auto b = enc.forward(s);
      CHECK(a == b);
      CHECK(a.size() == 3);
      CHECK(a.allFinite());
      Encoder same(small_config(variant));
      CHECK(same.forward(s) == a);
    }
    SUBCASE("length checks") {
      CHECK_THROWS_AS(enc.forward(seq({})), Error);
      CHECK_THROWS_AS(enc.forward(seq(std::vector<TokenId>(11, 9))), Error);
      CHECK_THROWS_AS(enc.forward(seq({InputVocabulary::kCls, 999})), Error);
    }
  }

  SUBCASE("linear one-token input equals head(embedding)") {
    Encoder enc(small_config(EncoderVariant::linear));
    const auto& e = enc.params().at("token_embedding");
    const auto& w = enc.params().at("head.weight");
    const auto& b = enc.params().at("head.bias");
    Eigen::VectorXd expected = (e.row(12) * w + b).transpose();
    CHECK(enc.forward(seq({12})) == expected);
  }

  SUBCASE("linear variant ignores text-token order") {
    Encoder enc(small_config(EncoderVariant::linear));
    perturb(enc.params(), 3, 0.5);
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
      std::vector<TokenId> ids = {InputVocabulary::kCls, InputVocabulary::kFirstClassToken + 1};
      const auto len = rng.between(1, 8);
      for (std::uint64_t i = 0; i < len; ++i) ids.push_back(static_cast<TokenId>(7 + rng.below(9)));
      auto shuffled = ids;
      rng.shuffle(std::span<TokenId>(shuffled.data() + 2, shuffled.size() - 2));
      const auto a = enc.forward(seq(ids));
      const auto b = enc.forward(seq(shuffled));
      CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("predict") {
  CHECK(predict(Eigen::Vector3d(0.1, 2.0, -1.0), LabelMode::multiclass) == LabelSet{1});
  CHECK(predict(Eigen::Vector2d(1.0, 1.0), LabelMode::multiclass) == LabelSet{0});
  CHECK(predict(Eigen::Vector3d(-1.0, 5.0, 5.0), LabelMode::multiclass) == LabelSet{1});

  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  CHECK(predict(Eigen::Vector3d(logit(0.7), logit(0.2), logit(0.6)), LabelMode::multilabel) == LabelSet{0, 2});
  CHECK(predict(Eigen::Vector3d(0.0, -1.0, -2.0), LabelMode::multilabel) == LabelSet{0});
  CHECK(predict(Eigen::Vector3d(-3.0, -1.0, -2.0), LabelMode::multilabel) == LabelSet{1});

  SUBCASE("multilabel rule against a direct sigmoid threshold") {
    Rng rng(17);
    for (int t = 0; t < 500; ++t) {
      Eigen::VectorXd y(4);
      for (int i = 0; i < 4; ++i) y[i] = rng.uniform(-3, 3);
      LabelSet expected;
      for (int i = 0; i < 4; ++i)
        if (1.0 / (1.0 + std::exp(-y[i])) >= 0.5) expected.push_back(static_cast<std::size_t>(i));
      if (expected.empty()) {
        Eigen::Index arg;
        y.maxCoeff(&arg);
        expected = {static_cast<std::size_t>(arg)};
      }
      CHECK(predict(y, LabelMode::multilabel) == expected);
    }
  }
}

TEST_CASE("cross-entropy") {
  for (std::size_t n : {2u, 3u, 7u}) {
    Eigen::VectorXd uniform = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    CHECK(cross_entropy(uniform, {1}, LabelMode::multiclass, nullptr) ==
          doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-15));
    CHECK(cross_entropy(uniform, {0, 1}, LabelMode::multilabel, nullptr) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  Eigen::Vector3d confident(0.0, 800.0, 0.0);
  CHECK(cross_entropy(confident, {1}, LabelMode::multiclass, nullptr) < 1e-12);
  Eigen::Vector3d ml(-800.0, 800.0, 800.0);
  CHECK(cross_entropy(ml, {1, 2}, LabelMode::multilabel, nullptr) < 1e-12);
  CHECK(std::isfinite(cross_entropy(Eigen::Vector3d(0.0, -900.0, 0.0), {1}, LabelMode::multiclass, nullptr)));

  SUBCASE("logit gradient by finite differences") {
    Rng rng(9);
    for (auto mode : {LabelMode::multiclass, LabelMode::multilabel}) {
      Eigen::VectorXd y(4);
      for (int i = 0; i < 4; ++i) y[i] = rng.uniform(-2, 2);
      const LabelSet gold = mode == LabelMode::multiclass ? LabelSet{2} : LabelSet{0, 3};
      Eigen::VectorXd d;
      cross_entropy(y, gold, mode, &d);
      for (int i = 0; i < 4; ++i) {
        Eigen::VectorXd up = y, down = y;
        up[i] += 1e-5;
        down[i] -= 1e-5;
        const double num =
            (cross_entropy(up, gold, mode, nullptr) - cross_entropy(down, gold, mode, nullptr)) / 2e-5;
        CHECK(d[i] == doctest::Approx(num).epsilon(1e-7));
      }
    }
  }
}

TEST_CASE("encoder gradients match central differences") {
  for (auto variant : {EncoderVariant::linear, EncoderVariant::tiny_transformer}) {
    for (auto mode : {LabelMode::multiclass, LabelMode::multilabel}) {
      CAPTURE(to_string(variant));
      CAPTURE(to_string(mode));
      Encoder enc(small_config(variant));
      // Move away from the small-init regime so every block carries gradient.
      perturb(enc.params(), 21, 0.3);
      const auto examples = gradient_examples(3, mode);
      auto grads = enc.params().zeros_like();
      enc.loss_and_grad(examples, mode, grads);
      auto scratch = enc.params().zeros_like();
      auto check = testing::central_difference_check(enc.params(), grads, [&] {
        return enc.loss_and_grad(examples, mode, scratch);
      });
      INFO("worst coordinate " << check.worst_name);
      CHECK(check.checked == enc.params().parameter_count());
      CHECK(check.worst_relative <= 1e-4);

      // Special-token embedding rows receive gradient.
      const auto& ge = grads.at("token_embedding");
      CHECK(ge.row(InputVocabulary::kFirstPage).norm() > 0.0);
      CHECK(ge.row(InputVocabulary::kFirstClassToken + 1).norm() > 0.0);
    }
  }

  SUBCASE("with a fixed dropout mask") {
    auto cfg = small_config(EncoderVariant::tiny_transformer);
    cfg.dropout = 0.3;
    Encoder enc(cfg);
    perturb(enc.params(), 5, 0.3);
    const auto examples = gradient_examples(3, LabelMode::multiclass);
    auto grads = enc.params().zeros_like();
    Rng r0(77);
    enc.loss_and_grad(examples, LabelMode::multiclass, grads, &r0);
    auto scratch = enc.params().zeros_like();
    auto check = testing::central_difference_check(enc.params(), grads, [&] {
      Rng r(77);
      return enc.loss_and_grad(examples, LabelMode::multiclass, scratch, &r);
    });
    INFO("worst coordinate " << check.worst_name);
    CHECK(check.worst_relative <= 1e-4);
  }
}

TEST_CASE("batch loss is the mean of example losses") {
  Encoder enc(small_config(EncoderVariant::tiny_transformer));
  const auto examples = gradient_examples(3, LabelMode::multiclass);
  auto g_all = enc.params().zeros_like();
  const double all = enc.loss_and_grad(examples, LabelMode::multiclass, g_all);
  double sum = 0.0;
  auto g_sum = enc.params().zeros_like();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto g = enc.params().zeros_like();
    const std::size_t idx[] = {i};
    sum += enc.loss_and_grad(examples, idx, LabelMode::multiclass, g);
    for (std::size_t p = 0; p < g.size(); ++p) g_sum[p] += g[p];
  }
  CHECK(all == doctest::Approx(sum / 4.0).epsilon(1e-13));
  for (std::size_t p = 0; p < g_sum.size(); ++p)
    CHECK((g_all[p] - g_sum[p] / 4.0).cwiseAbs().maxCoeff() <= 1e-13);

  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(enc.loss_and_grad(examples, none, LabelMode::multiclass, g_all), Error);
}

TEST_CASE("non-finite loss names the example") {
  Encoder enc(small_config(EncoderVariant::linear));
  enc.params().at("token_embedding").row(InputVocabulary::kUnk).setConstant(std::numeric_limits<double>::infinity());
  const auto examples = gradient_examples(3, LabelMode::multiclass);
  auto g = enc.params().zeros_like();
  try {
    enc.loss_and_grad(examples, LabelMode::multiclass, g);
    FAIL("expected a DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.index == 1);
  }
}
