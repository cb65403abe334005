#pragma once

#include "relprompt/corpus.hpp"
#include "relprompt/finetune.hpp"
#include "relprompt/model.hpp"
#include "relprompt/pretrain.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace relprompt {

struct TokenizerConfig {
  std::size_t max_size = 4096;
  std::size_t min_freq = 1;
};

/// Rows and columns of an experiment table.
struct ExperimentMatrix {
  std::vector<std::size_t> shots{3, 5, 10, 20};
  /// Variant keys: said, wo_pt, wo_rel, wo_qa, wo_qq, wo_plft, linear, mlp, queryadapt.
  std::vector<std::string> variants{"said", "wo_pt", "wo_rel", "wo_qa", "wo_qq", "wo_plft"};
  std::size_t runs = 5;
  std::uint64_t base_seed = 1;
};

/// Every configurable knob, grouped by pipeline stage.
struct RunConfig {
  std::optional<std::uint64_t> seed;  // global override for the per-stage seeds
  SyntheticCorpusSpec corpus;
  TokenizerConfig tokenizer;
  EncoderConfig model;  // vocab_size 0 = take it from the vocabulary
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  ExperimentMatrix eval;

  /// Copies `seed` into the stage seeds when set.
  void apply_seed();
};

// JSON encodings. Readers start from the current value, so absent keys keep
// their defaults; unknown keys and mistyped values throw Config.
void to_json(nlohmann::json& j, const TokenizerConfig& c);
void from_json(const nlohmann::json& j, TokenizerConfig& c);
void to_json(nlohmann::json& j, const SyntheticCorpusSpec& c);
void from_json(const nlohmann::json& j, SyntheticCorpusSpec& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);
void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);
void to_json(nlohmann::json& j, const ExperimentMatrix& c);
void from_json(const nlohmann::json& j, ExperimentMatrix& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Sectioned key-value text ("[model]\nhidden_dim = 64") as a JSON tree.
/// Values are typed as bool, integer, float or string; comma-separated
/// values become arrays.
nlohmann::json parse_ini(const std::string& text);

/// Reads a RunConfig from a .json file or a sectioned key-value file.
RunConfig load_run_config(const std::filesystem::path& path);

/// Parses a JSON document; throws Config with `what` in the message.
nlohmann::json parse_json_text(const std::string& text, const std::string& what);

}  // namespace relprompt
