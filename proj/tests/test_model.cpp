#include "relprompt/error.hpp"
#include "relprompt/model.hpp"
#include "relprompt/prompt.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <array>

using namespace relprompt;
using testing_support::pattern_config;
using testing_support::pattern_model;

namespace {

PromptSequence oracle_prompt() {
  const std::vector<TokenId> left{5, 6};
  const std::vector<TokenId> right{7};
  return assemble_relation_prompt(left, RelationKind::QueryQuery, right, 2, 10);
}

}  // namespace

// tests/oracles/forward.py, float64 straight-line reimplementation.
TEST(Encoder, MatchesScalarReimplementation) {
  const std::array<double, 40> expected{
      1.2373207994122848,  -0.85838254627938926, -1.1246741915776917, 1.468898303836037,
      0.49796959139727659, -0.54263263454660771, -1.2444539669877932, 1.8224285693263744,
      1.5113944586079482,  0.04398176385266428,  -0.66791060055988027, -1.4884661049183583,
      2.1057514870538725,  -0.45725635469905718, -1.039146403057962,  -0.36368221321092331,
      1.9180899701413188,  -0.72528108548931791, -1.1284425752787433, 0.5301005638429368,
      2.0766710206738379,  -0.58083379166565197, -1.0911013126934785, 0.011986977484701511,
      1.3168464208049659,  -0.85982667390889334, -1.1257263606612544, 1.3940210666956148,
      1.6450651887607781,  -0.82424493983346681, -1.1336206053337767, 1.0098674628784787,
      1.5712842608336901,  -0.83845170909661082, -1.1320515917637464, 1.1088973664454371,
      1.9209584441277248,  -0.72364864847130361, -1.128194394188593,  0.52350721582237547};
  const auto model = pattern_model();
  const auto prompt = oracle_prompt();
  const auto hidden = model.encode(model.embed(prompt), prompt.pad_mask());
  ASSERT_EQ(hidden.rows(), 10);
  ASSERT_EQ(hidden.cols(), 4);
  for (Eigen::Index i = 0; i < hidden.size(); ++i) {
    EXPECT_NEAR(hidden.data()[i], expected[static_cast<std::size_t>(i)], 1e-12) << i;
  }
}

TEST(Embed, GatherMatchesIndependentLookup) {
  const auto model = pattern_model();
  const auto prompt = oracle_prompt();
  const auto emb = model.embed(prompt);
  const auto& p = model.params();
  const auto& word = p.value(p.require("embeddings.word"));
  const auto& pos = p.value(p.require("embeddings.position"));
  const auto& qq = p.value(p.require("relation.qq"));
  const std::array<int, 10> tokens{2, 5, 6, -1, -2, 7, 3, 0, 0, 0};
  for (Eigen::Index r = 0; r < 10; ++r) {
    const int t = tokens[static_cast<std::size_t>(r)];
    const RowVector<double> row = (t >= 0 ? word.row(t) : qq.row(-t - 1)) + pos.row(r);
    EXPECT_TRUE(emb.row(r).isApprox(row, 1e-15)) << r;
  }
}

TEST(Embed, AllPadBody) {
  const auto model = pattern_model();
  PromptSequence prompt;
  prompt.elements.assign(6, PromptElement::pad());
  const auto emb = model.embed(prompt);
  const auto& p = model.params();
  for (Eigen::Index r = 0; r < 6; ++r) {
    const RowVector<double> row = p.value(p.require("embeddings.word")).row(0) +
                                  p.value(p.require("embeddings.position")).row(r);
    EXPECT_TRUE(emb.row(r).isApprox(row));
  }
}

TEST(Embed, QiOverrideSubstitution) {
  const auto model = pattern_model();
  const std::vector<TokenId> q{5};
  const std::vector<TokenId> name{6};
  const auto intent = assemble_intent_prompt(q, name, 2, 10);
  const auto relation = assemble_relation_prompt(q, RelationKind::QueryQuery, name, 2, 10);
  const Matrix<double> bank = model.bank(RelationKind::QueryQuery);
  EXPECT_TRUE(model.embed(intent, &bank).isApprox(model.embed(relation), 0.0));
}

TEST(Embed, RejectsOutOfRangeInput) {
  const auto model = pattern_model();
  const std::vector<TokenId> bad{50};
  const auto prompt = assemble_text_prompt(bad, 5);
  EXPECT_THROW(model.embed(prompt), Error);
  const std::vector<TokenId> ok{5};
  EXPECT_THROW(model.embed(assemble_text_prompt(ok, 12)), Error);
}

TEST(Encoder, ZeroLayersIsIdentity) {
  auto config = pattern_config();
  config.num_layers = 0;
  auto params = declare_parameters(config).cast<double>();
  testing_support::fill_pattern(params);
  const Model<double> model(config, std::move(params));
  Matrix<double> x(1, 4);
  x << 0.3, -0.2, 1.5, 0.0;
  EXPECT_TRUE(model.encode(x, {false}).isApprox(x, 0.0));
}

TEST(Encoder, PermutationEquivariance) {
  const auto model = pattern_model();
  const auto prompt = oracle_prompt();
  const std::size_t n = prompt.content_length();
  const Matrix<double> emb = model.embed(prompt, nullptr, n);
  const std::vector<bool> mask(n, false);
  const Matrix<double> out = model.encode(emb, mask);
  Matrix<double> swapped = emb;
  swapped.row(1).swap(swapped.row(5));
  const Matrix<double> out2 = model.encode(swapped, mask);
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(n); ++r) {
    const Eigen::Index src = r == 1 ? 5 : (r == 5 ? 1 : r);
    EXPECT_TRUE(out2.row(r).isApprox(out.row(src), 1e-12)) << r;
  }
}

TEST(Encoder, PadRowsDoNotAffectContent) {
  const auto model = pattern_model();
  const auto prompt = oracle_prompt();
  const auto full = model.encode(model.embed(prompt), prompt.pad_mask());
  const std::size_t n = prompt.content_length();
  const auto trimmed = model.encode(model.embed(prompt, nullptr, n), std::vector<bool>(n, false));
  EXPECT_TRUE(full.topRows(static_cast<Eigen::Index>(n)).isApprox(trimmed, 1e-13));
}

TEST(AdaptWeights, ZeroHeadGivesHalf) {
  auto model = pattern_model();
  for (auto& t : model.params().tensors()) {
    if (t.name.rfind("adapt_head.out", 0) == 0) t.value.setZero();
  }
  RowVector<double> pooled(4);
  pooled << 1.0, -2.0, 0.5, 3.0;
  const auto w = model.adapt_weights(pooled);
  EXPECT_DOUBLE_EQ(w.query_query, 0.5);
  EXPECT_DOUBLE_EQ(w.query_answer, 0.5);
}

TEST(AdaptWeights, Saturation) {
  const auto w = simplex_weights(10.0, -10.0);
  EXPECT_NEAR(w.query_query, 1.0, 1e-6);
  EXPECT_NEAR(w.query_query + w.query_answer, 1.0, 1e-15);
}

TEST(AdaptWeights, MatchesStandaloneSoftmax) {
  // tests/oracles/forward.py: adapt head on the pooled [CLS 5 6 SEP] encoding.
  const auto model = pattern_model();
  const std::vector<TokenId> t{5, 6};
  const auto pooled = model.encode_pooled(assemble_text_prompt(t, 10));
  const auto w = model.adapt_weights(pooled);
  EXPECT_NEAR(w.query_query, 0.31537800674331085, 1e-12);
  EXPECT_NEAR(w.query_answer, 0.68462199325668915, 1e-12);
}

TEST(GenerateQi, Endpoint) {
  const auto model = pattern_model();
  const auto& qq = model.bank(RelationKind::QueryQuery);
  const auto& qa = model.bank(RelationKind::QueryAnswer);
  EXPECT_TRUE(generate_qi_tokens<double>({1.0, 0.0}, qq, qa).isApprox(qq, 0.0));
}

TEST(GenerateQi, OppositeBanksCancel) {
  Matrix<double> a(2, 3);
  a << 1.0, -2.0, 0.5, 3.0, 0.25, -1.0;
  const Matrix<double> neg = -a;
  EXPECT_TRUE(generate_qi_tokens<double>({0.5, 0.5}, a, neg).isZero(0.0));
}

TEST(GenerateQi, ElementwiseOracle) {
  // tests/oracles/forward.py: 0.3 * relation.qq + 0.7 * relation.qa.
  const std::array<double, 8> expected{0.34529456892679361,  0.23755883172332642,  -0.21820115049596306,
                                       -0.35429593604774118, 0.36116924319802152,  -0.0066765394154513213,
                                       -0.36474117614381973, -0.18845913532380076};
  const auto model = pattern_model();
  const auto qi = generate_qi_tokens<double>({0.3, 0.7}, model.bank(RelationKind::QueryQuery),
                                             model.bank(RelationKind::QueryAnswer));
  for (Eigen::Index i = 0; i < qi.size(); ++i) EXPECT_NEAR(qi.data()[i], expected[static_cast<std::size_t>(i)], 1e-15);
}

TEST(InitParameters, DistributionAndDeterminism) {
  auto config = pattern_config();
  const auto a = init_parameters(config, 3);
  const auto b = init_parameters(config, 3);
  const auto c = init_parameters(config, 4);
  bool differs = false;
  for (std::size_t i = 0; i < a.params().tensors().size(); ++i) {
    const auto& t = a.params().tensors()[i];
    EXPECT_TRUE(t.value.isApprox(b.params().tensors()[i].value, 0.0)) << t.name;
    if (!t.value.isApprox(c.params().tensors()[i].value, 0.0)) differs = true;
    const bool is_bias = t.name.size() > 5 && t.name.compare(t.name.size() - 5, 5, ".bias") == 0;
    const bool is_gain = t.name.size() > 5 && t.name.compare(t.name.size() - 5, 5, ".gain") == 0;
    if (is_bias) {
      EXPECT_TRUE(t.value.isZero(0.0)) << t.name;
    } else if (is_gain) {
      EXPECT_TRUE(t.value.isOnes(0.0)) << t.name;
    } else {
      EXPECT_LE(t.value.cwiseAbs().maxCoeff(), 0.04f) << t.name;
      EXPECT_GT(t.value.cwiseAbs().maxCoeff(), 0.0f) << t.name;
    }
  }
  EXPECT_TRUE(differs);
}

TEST(EncoderConfig, Validation) {
  auto config = pattern_config();
  config.num_heads = 3;
  EXPECT_THROW(config.validate(), Error);
  config = pattern_config();
  config.vocab_size = 3;
  EXPECT_THROW(config.validate(), Error);
  config = pattern_config();
  config.dropout_rate = 1.0;
  EXPECT_THROW(config.validate(), Error);
}

TEST(Model, TiedWeightsOmitMlmMatrix) {
  auto config = pattern_config();
  config.tie_mlm_weights = true;
  const auto model = init_parameters(config, 1);
  EXPECT_FALSE(model.params().find("mlm.weight").has_value());
  EXPECT_FALSE(model.layout().mlm_weight.has_value());
}

TEST(Model, CastRoundTrip) {
  const auto model = init_parameters(pattern_config(), 2);
  const auto back = model.cast<double>().cast<float>();
  for (std::size_t i = 0; i < model.params().tensors().size(); ++i) {
    EXPECT_TRUE(model.params().tensors()[i].value.isApprox(back.params().tensors()[i].value, 0.0));
  }
}
