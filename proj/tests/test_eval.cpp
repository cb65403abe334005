#include "relprompt/error.hpp"
#include "relprompt/eval.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace relprompt;

namespace {

std::vector<IntentId> ids(std::initializer_list<IntentId> v) { return v; }

}  // namespace

TEST(Accuracy, Examples) {
  EXPECT_DOUBLE_EQ(accuracy(ids({0, 1, 1, 0}), ids({0, 1, 0, 0})), 0.75);
  EXPECT_DOUBLE_EQ(accuracy(ids({2}), ids({2})), 1.0);
  EXPECT_THROW(accuracy(ids({}), ids({})), Error);
  EXPECT_THROW(accuracy(ids({0, 1}), ids({0})), Error);
}

// Fractions from tests/oracles/metrics.py.
TEST(MacroF1, Examples) {
  EXPECT_NEAR(macro_f1(ids({0, 0, 1, 1}), ids({0, 1, 1, 1}), 2), 11.0 / 15.0, 1e-15);
  EXPECT_DOUBLE_EQ(macro_f1(ids({0, 1, 2, 1}), ids({0, 1, 2, 1}), 3), 1.0);
  EXPECT_NEAR(macro_f1(ids({0, 1, 1, 0}), ids({0, 1, 1, 0}), 3), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(macro_f1(ids({0, 3}), ids({0, 1}), 3), Error);
}

TEST(PerClass, ZeroDenominators) {
  const auto m = per_class_metrics(ids({0, 0, 0}), ids({0, 1, 0}), 3);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_NEAR(m[0].precision, 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(m[0].recall, 1.0);
  EXPECT_EQ(m[0].support, 2u);
  EXPECT_DOUBLE_EQ(m[1].precision, 0.0);
  EXPECT_DOUBLE_EQ(m[1].recall, 0.0);
  EXPECT_DOUBLE_EQ(m[1].f1, 0.0);
  EXPECT_EQ(m[2].support, 0u);
}

TEST(Variant, Labels) {
  EXPECT_EQ(parse_variant("said").label, "SAID");
  EXPECT_EQ(parse_variant("wo_rel").label, "w/o REL");
  EXPECT_EQ(parse_variant("wo_plft").ablation, Ablation::NoPromptLearning);
  EXPECT_EQ(parse_variant("queryadapt").strategy, TransferStrategy::QueryAdapt);
  EXPECT_THROW(parse_variant("wo_everything"), Error);
}

TEST(Variant, PretrainingSetups) {
  const PretrainConfig base;
  EXPECT_FALSE(variant_pretraining(parse_variant("wo_pt"), base).has_value());
  EXPECT_TRUE(variant_pretraining(parse_variant("wo_rel"), base)->text_only);
  const auto no_qa = *variant_pretraining(parse_variant("wo_qa"), base);
  EXPECT_TRUE(no_qa.use_query_query);
  EXPECT_FALSE(no_qa.use_query_answer);
  const auto no_qq = *variant_pretraining(parse_variant("wo_qq"), base);
  EXPECT_FALSE(no_qq.use_query_query);
  EXPECT_TRUE(no_qq.use_query_answer);
  EXPECT_FALSE(variant_finetuning(parse_variant("wo_plft"), FinetuneConfig{}).prompt_learning);
  EXPECT_EQ(variant_finetuning(parse_variant("mlp"), FinetuneConfig{}).strategy, TransferStrategy::MlpGenerator);
}

TEST(TimingPath, Sidecar) {
  EXPECT_EQ(timing_path("out/report.json").string(), "out/report.json.timing.json");
}

namespace {

RunConfig tiny_run() {
  RunConfig config;
  config.corpus.num_sessions = 80;
  config.corpus.num_intents = 3;
  config.corpus.labeled_per_intent = 10;
  config.model.hidden_dim = 8;
  config.model.num_layers = 1;
  config.model.num_heads = 2;
  config.model.ffn_dim = 16;
  config.model.max_len = 24;
  config.pretrain.epochs = 1;
  config.pretrain.learning_rate = 1e-3;
  config.finetune.learning_rate_grid = {1e-3};
  config.finetune.max_epochs = 2;
  config.finetune.batch_size = 4;
  config.eval.shots = {3};
  config.eval.variants = {"said", "wo_pt"};
  config.eval.runs = 2;
  return config;
}

}  // namespace

TEST(RunExperiment, ReportShapeAndDeterminism) {
  const auto config = tiny_run();
  const auto data = synthetic_experiment_data(config.corpus, config.tokenizer);
  std::vector<std::string> messages;
  const auto a = run_experiment(data, config, [&](const std::string& m) { messages.push_back(m); });
  const auto b = run_experiment(data, config);
  EXPECT_FALSE(messages.empty());
  ASSERT_EQ(a.cells.size(), 2u);
  const auto* cell = a.find("wo_pt", 3);
  ASSERT_NE(cell, nullptr);
  ASSERT_EQ(cell->runs.size(), 2u);
  EXPECT_EQ(cell->runs[0].seed, 1u);
  EXPECT_EQ(cell->runs[1].seed, 2u);
  EXPECT_EQ(a.find("said", 5), nullptr);
  double mean = 0.0;
  for (const auto& r : cell->runs) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 100.0);
    mean += r.accuracy / 2.0;
  }
  EXPECT_NEAR(cell->mean_accuracy, mean, 1e-12);
  EXPECT_EQ(report_json(a).dump(), report_json(b).dump());
  const auto j = report_json(a);
  EXPECT_EQ(j.at("table").size(), 2u);
  EXPECT_EQ(j.at("table")[0].at("variant"), "SAID");
  EXPECT_FALSE(j.dump().find("seconds") != std::string::npos);
  EXPECT_EQ(timing_json(a).at("cells").size(), 2u);

  testing_support::TempDir dir;
  emit_report(a, dir / "r.json");
  EXPECT_EQ(testing_support::read_file(dir / "r.json"), j.dump(2) + "\n");
  EXPECT_TRUE(std::filesystem::exists(dir / "r.json.timing.json"));
}
