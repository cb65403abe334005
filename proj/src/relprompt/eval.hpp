#pragma once

#include "relprompt/config.hpp"
#include "relprompt/corpus.hpp"
#include "relprompt/finetune.hpp"
#include "relprompt/vocab.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace relprompt {

/// Fraction of matching positions; throws Data on empty or mismatched input.
double accuracy(std::span<const IntentId> preds, std::span<const IntentId> labels);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Per-class precision/recall/F1 with 0/0 taken as 0.
std::vector<ClassMetrics> per_class_metrics(std::span<const IntentId> preds, std::span<const IntentId> labels,
                                            std::size_t num_classes);

/// Unweighted mean of the per-class F1 over all `num_classes` classes.
double macro_f1(std::span<const IntentId> preds, std::span<const IntentId> labels, std::size_t num_classes);

enum class Ablation : std::uint8_t {
  None,
  NoPretraining,
  NoRelations,
  NoQueryAnswer,
  NoQueryQuery,
  NoPromptLearning,
};

struct Variant {
  std::string key;    // matrix name, e.g. "wo_rel"
  std::string label;  // table row, e.g. "w/o REL"
  Ablation ablation = Ablation::None;
  TransferStrategy strategy = TransferStrategy::FreshRandom;
};

/// said, wo_pt, wo_rel, wo_qa, wo_qq, wo_plft, linear, mlp, queryadapt.
Variant parse_variant(const std::string& key);

/// Pretraining setup a variant needs; nullopt for w/o PT.
std::optional<PretrainConfig> variant_pretraining(const Variant& variant, const PretrainConfig& base);
FinetuneConfig variant_finetuning(const Variant& variant, const FinetuneConfig& base);

/// Filtered sessions, labeled pool and the vocabulary built over them.
struct ExperimentData {
  std::vector<Session> sessions;
  std::vector<LabeledQuery> labeled;
  IntentSchema schema;
  Vocabulary vocab;
};

/// Session queries, answers and intent names, in corpus order.
std::vector<std::string> vocabulary_texts(const std::vector<Session>& sessions, const IntentSchema& schema);
Vocabulary build_corpus_vocab(const std::vector<Session>& sessions, const IntentSchema& schema,
                              const TokenizerConfig& config);

/// Generates the synthetic corpus, filters it and builds its vocabulary.
ExperimentData synthetic_experiment_data(const SyntheticCorpusSpec& spec, const TokenizerConfig& tokenizer);

struct RunRecord {
  std::uint64_t seed = 0;
  double accuracy = 0.0;  // percent
  double f1 = 0.0;        // percent
  double learning_rate = 0.0;
  std::vector<ClassMetrics> per_class;  // fractions
  double train_seconds_per_epoch = 0.0;
  double inference_seconds_per_query = 0.0;
};

struct CellReport {
  Variant variant;
  std::size_t shots = 0;
  std::vector<RunRecord> runs;
  double mean_accuracy = 0.0;
  double mean_f1 = 0.0;
  double train_seconds_per_epoch = 0.0;
  double inference_seconds_per_query = 0.0;
};

struct ExperimentReport {
  RunConfig config;
  std::vector<std::string> schema;
  std::vector<CellReport> cells;
  /// Per pretrained variant key, seconds per pretraining epoch.
  std::vector<std::pair<std::string, std::vector<double>>> pretrain_seconds;

  const CellReport* find(const std::string& variant_key, std::size_t shots) const;
};

using ProgressCallback = std::function<void(const std::string&)>;

/// Each (variant, shots) cell runs config.eval.runs episodes with seeds
/// base_seed + r; each pretraining setup is trained once and shared.
ExperimentReport run_experiment(const ExperimentData& data, const RunConfig& config,
                                const ProgressCallback& progress = {});

/// Deterministic table (metrics only) as JSON.
nlohmann::json report_json(const ExperimentReport& report);
/// Wall-clock measurements, kept apart so the report bytes are reproducible.
nlohmann::json timing_json(const ExperimentReport& report);

/// Writes the report to `path` and the timings to `<path>.timing.json`.
void emit_report(const ExperimentReport& report, const std::filesystem::path& path);
std::filesystem::path timing_path(const std::filesystem::path& report_path);

}  // namespace relprompt
