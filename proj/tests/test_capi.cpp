#include "relprompt/relprompt.h"

#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Owns a string returned through the C API.
struct Owned {
  char* text = nullptr;
  ~Owned() { rp_string_free(text); }
  std::string str() const { return text ? text : ""; }
};

class CApi : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("relprompt_capi_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& leaf) const { return (dir_ / leaf).string(); }

  fs::path dir_;
};

json inspect(const json& request, rp_status* status = nullptr) {
  Owned out;
  const auto s = rp_inspect_prompt(request.dump().c_str(), &out.text);
  if (status) *status = s;
  return out.str();
}

}  // namespace

TEST(CApiBasics, VersionAndFree) {
  EXPECT_STRNE(rp_version(), "");
  rp_string_free(nullptr);
  rp_model_free(nullptr);
}

TEST(CApiBasics, NullArgumentsAreUsageErrors) {
  char* out = nullptr;
  EXPECT_EQ(rp_inspect_prompt(nullptr, &out), RP_ERROR_USAGE);
  EXPECT_NE(std::string(rp_last_error()), "");
  EXPECT_EQ(rp_generate_corpus(nullptr, nullptr, "l", "s"), RP_ERROR_USAGE);
  EXPECT_EQ(rp_model_predict(nullptr, "q", &out), RP_ERROR_USAGE);
  EXPECT_EQ(rp_model_load("x", nullptr), RP_ERROR_USAGE);
  EXPECT_EQ(rp_load_config(nullptr, nullptr), RP_ERROR_USAGE);
  EXPECT_EQ(out, nullptr);
}

TEST(CApiBasics, LastErrorClearedOnSuccess) {
  char* out = nullptr;
  EXPECT_EQ(rp_load_config("/nonexistent/config.ini", &out), RP_ERROR_IO);
  EXPECT_NE(std::string(rp_last_error()).find("config"), std::string::npos);
  ASSERT_EQ(rp_load_config(nullptr, &out), RP_OK);
  EXPECT_STREQ(rp_last_error(), "");
  const auto config = json::parse(out);
  rp_string_free(out);
  EXPECT_EQ(config.at("finetune").at("batch_size"), 1);
}

TEST(CApiBasics, ConfigErrors) {
  char* out = nullptr;
  EXPECT_EQ(rp_generate_corpus(R"({"num_sesions": 3})", "a", "b", "c"), RP_ERROR_CONFIG);
  EXPECT_EQ(rp_generate_corpus("{", "a", "b", "c"), RP_ERROR_CONFIG);
  EXPECT_EQ(rp_inspect_prompt(R"({"query": "a b", "partner": "c", "colour": 1})", &out), RP_ERROR_USAGE);
}

// Cases written by tests/oracles/prompt_layout.py.
TEST(CApiBasics, GoldenPromptLayouts) {
  std::ifstream in(TEST_DATA_DIR "/prompt_golden.json");
  const auto cases = json::parse(in);
  ASSERT_EQ(cases.size(), 10u);
  for (const auto& c : cases) {
    auto request = c.at("request");
    request["vocab"] = TEST_DATA_DIR "/golden_vocab.txt";
    rp_status status = RP_ERROR_INTERNAL;
    const auto got = inspect(request, &status);
    ASSERT_EQ(status, RP_OK) << c.at("name") << ": " << rp_last_error();
    EXPECT_EQ(got, c.at("expected")) << c.at("name");
  }
}

TEST(CApiBasics, DigestOfKnownContent) {
  const auto p = fs::temp_directory_path() / "relprompt_capi_digest.txt";
  std::ofstream(p, std::ios::binary) << "abc";
  Owned hex;
  ASSERT_EQ(rp_file_digest(p.c_str(), &hex.text), RP_OK);
  EXPECT_EQ(hex.str(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  fs::remove(p);
  char* none = nullptr;
  EXPECT_EQ(rp_file_digest(p.c_str(), &none), RP_ERROR_IO);
}

TEST_F(CApi, SmallPipeline) {
  const char* corpus = R"({"num_sessions": 60, "num_intents": 3, "labeled_per_intent": 10})";
  ASSERT_EQ(rp_generate_corpus(corpus, path("s.jsonl").c_str(), path("l.jsonl").c_str(), path("schema.json").c_str()),
            RP_OK)
      << rp_last_error();
  ASSERT_EQ(rp_build_vocab(path("s.jsonl").c_str(), path("schema.json").c_str(), nullptr, path("v.txt").c_str()), RP_OK)
      << rp_last_error();
  const char* model = R"({"hidden_dim": 8, "num_layers": 1, "num_heads": 2, "ffn_dim": 16, "max_len": 24})";
  ASSERT_EQ(rp_pretrain(path("s.jsonl").c_str(), path("v.txt").c_str(), model, R"({"epochs": 2})",
                        path("ck.bin").c_str(), path("log.jsonl").c_str()),
            RP_OK)
      << rp_last_error();
  std::ifstream log(path("log.jsonl"));
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line); ++lines) EXPECT_TRUE(json::parse(line).contains("mean_loss"));
  EXPECT_EQ(lines, 2u);

  const char* ft = R"({"strategy": "queryadapt", "learning_rate_grid": [1e-3], "max_epochs": 2})";
  Owned summary;
  EXPECT_EQ(rp_finetune(path("ck.bin").c_str(), path("l.jsonl").c_str(), path("schema.json").c_str(), 0, ft,
                        path("m.bin").c_str(), nullptr),
            RP_ERROR_USAGE);
  ASSERT_EQ(rp_finetune(path("ck.bin").c_str(), path("l.jsonl").c_str(), path("schema.json").c_str(), 3, ft,
                        path("m.bin").c_str(), &summary.text),
            RP_OK)
      << rp_last_error();
  const auto s = json::parse(summary.str());
  EXPECT_EQ(s.at("strategy"), "queryadapt");
  EXPECT_EQ(s.at("episode").at("train"), 9);
  EXPECT_EQ(s.at("grid").size(), 1u);

  rp_model* handle = nullptr;
  ASSERT_EQ(rp_model_load(path("m.bin").c_str(), &handle), RP_OK) << rp_last_error();
  Owned prediction;
  ASSERT_EQ(rp_model_predict(handle, "my code loop has a bug", &prediction.text), RP_OK) << rp_last_error();
  rp_model_free(handle);
  const auto p = json::parse(prediction.str());
  double total = 0.0;
  for (const auto& [name, value] : p.at("probabilities").items()) total += value.get<double>();
  EXPECT_NEAR(total, 1.0, 1e-5);
  EXPECT_TRUE(p.at("probabilities").contains(p.at("intent").get<std::string>()));
  EXPECT_NEAR(p.at("lambda_qq").get<double>() + p.at("lambda_qa").get<double>(), 1.0, 1e-6);
  const auto dominance = p.at("dominance").get<std::string>();
  EXPECT_TRUE(dominance == "qq-dominated" || dominance == "qa-dominated");

  rp_model* missing = nullptr;
  EXPECT_EQ(rp_model_load(path("nope.bin").c_str(), &missing), RP_ERROR_IO);
  EXPECT_EQ(missing, nullptr);
}
