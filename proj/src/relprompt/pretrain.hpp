#pragma once

#include "relprompt/corpus.hpp"
#include "relprompt/model.hpp"
#include "relprompt/optimizer.hpp"
#include "relprompt/prompt.hpp"
#include "relprompt/vocab.hpp"

#include <functional>
#include <vector>

namespace relprompt {

enum class MaskAction : std::uint8_t { ReplaceWithMask, ReplaceWithRandom, KeepOriginal };

struct MaskPlan {
  std::vector<std::size_t> positions;   // ascending
  std::vector<MaskAction> actions;
  std::vector<TokenId> targets;         // original ids at `positions`
  std::vector<TokenId> replacements;    // id placed at each position
};

struct PretrainConfig {
  double mask_ratio = 0.25;
  std::size_t epochs = 4;
  double learning_rate = 3e-5;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 17;
  bool use_query_query = true;
  bool use_query_answer = true;
  bool text_only = false;  // bare [CLS] q [SEP] prompts, no relations
  Pairing pairing = Pairing::Adjacent;

  /// Throws Config when mask_ratio is outside (0,1), counts are zero or the
  /// relation mix is empty without text_only.
  void validate() const;
  AdamHyper adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

/// One QueryQuery and one QueryAnswer prompt per query (filtered by the mix),
/// or one bare prompt per query in text-only mode. Turns whose answer is
/// missing or tokenizes to nothing contribute no QueryAnswer prompt.
std::vector<PromptSequence> build_pretrain_set(const std::vector<Session>& sessions, const Vocabulary& vocab,
                                               const PretrainConfig& config, std::size_t m, std::size_t max_len);

/// round-half-up(mask_ratio * |maskable|) positions (at least one when any
/// exist), sampled without replacement; 80% MASK, 10% random token, 10% kept.
MaskPlan make_mask_plan(const PromptSequence& prompt, double mask_ratio, std::size_t vocab_size, Rng& rng);

PromptSequence apply_mask_plan(const PromptSequence& prompt, const MaskPlan& plan);

/// Mean negative log-probability of the plan's targets. `logits` has one row
/// per plan position. When `grad` is non-null it receives dLoss/dLogits
/// multiplied by `grad_scale` (the caller's normalisation).
template <typename T>
T mlm_loss(const Matrix<T>& logits, const MaskPlan& plan, Matrix<T>* grad = nullptr, T grad_scale = T(1));

/// Summed (not averaged) masked-token NLL of one prompt. With
/// `grad_scale` > 0, gradients of grad_scale * sum are accumulated into the
/// model's slots.
template <typename T>
T mlm_forward_backward(Model<T>& model, const PromptSequence& masked, const MaskPlan& plan, Rng* dropout,
                       T grad_scale);

/// Summed masked-token NLL of one prompt, forward only.
template <typename T>
T masked_nll(const Model<T>& model, const PromptSequence& masked, const MaskPlan& plan);

/// Mean per-token masked loss over `prompts` without updating anything.
double evaluate_mlm_loss(const Model<float>& model, const std::vector<PromptSequence>& prompts, double mask_ratio,
                         std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

struct PretrainResult {
  Model<float> model;
  AdamOptimizer optimizer;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Runs masked language modelling over the relation-aware prompt set.
/// Throws Numeric with the batch index if the loss becomes non-finite.
PretrainResult pretrain(const std::vector<Session>& sessions, const Vocabulary& vocab,
                        const EncoderConfig& model_config, const PretrainConfig& config,
                        const EpochCallback& on_epoch = {});

/// Same, starting from an existing model (used by tests and resumption).
PretrainResult pretrain_model(Model<float> model, const std::vector<PromptSequence>& prompts,
                              const PretrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace relprompt
