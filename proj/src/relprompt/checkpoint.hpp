#pragma once

#include "relprompt/finetune.hpp"
#include "relprompt/optimizer.hpp"
#include "relprompt/pretrain.hpp"
#include "relprompt/vocab.hpp"

#include <filesystem>
#include <optional>
#include <string_view>

namespace relprompt {

inline constexpr int kCheckpointVersion = 1;

/// Relation banks trained by a pretraining configuration.
std::vector<RelationKind> pretrained_relations(const PretrainConfig& config);

struct Checkpoint {
  PretrainedModel pretrained;
  Vocabulary vocab;
  PretrainConfig pretrain;
  std::vector<AdamState<float>> optimizer;  // per tensor, empty when absent
};

/// Tensor container with the encoder config, pretraining config, vocabulary
/// (tokens and SHA-256) and, when given, the Adam moments.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const Vocabulary& vocab,
                     const PretrainConfig& pretrain, const AdamOptimizer* optimizer = nullptr);
/// Validates the container, the vocabulary digest and every tensor shape.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct FinetunedModel {
  IntentClassifier<float> classifier;
  Vocabulary vocab;
  IntentSchema schema;
  FinetuneConfig config;
  double learning_rate = 0.0;
};

/// The fine-tuned tensors plus, for QueryAdapt, the frozen pretrained copy
/// under the "frozen/" prefix.
void save_finetuned(const std::filesystem::path& path, const FinetuneResult& result, const Vocabulary& vocab,
                    const IntentSchema& schema, const FinetuneConfig& config);
FinetunedModel load_finetuned(const std::filesystem::path& path);

struct Prediction {
  IntentId intent = 0;
  std::vector<float> probabilities;
  std::optional<AttentionWeights<float>> weights;  // LinearGlobal and QueryAdapt
};

/// Encodes the query with the model's vocabulary and scores every intent.
Prediction predict(const FinetunedModel& model, std::string_view query);

}  // namespace relprompt
