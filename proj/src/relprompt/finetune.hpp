#pragma once

#include "relprompt/corpus.hpp"
#include "relprompt/model.hpp"
#include "relprompt/optimizer.hpp"
#include "relprompt/vocab.hpp"

#include <functional>
#include <optional>
#include <string_view>
#include <vector>

namespace relprompt {

enum class TransferStrategy : std::uint8_t { FreshRandom, LinearGlobal, MlpGenerator, QueryAdapt };

/// "said", "linear", "mlp" or "queryadapt".
const char* strategy_name(TransferStrategy strategy);
/// Accepts the names above; throws Config otherwise.
TransferStrategy parse_strategy(std::string_view name);
/// True for the strategies that read the pretrained qq/qa banks.
bool uses_relation_banks(TransferStrategy strategy);

struct FinetuneConfig {
  TransferStrategy strategy = TransferStrategy::FreshRandom;
  std::vector<double> learning_rate_grid{1e-5, 4e-5, 1e-4};
  std::size_t max_epochs = 40;
  std::size_t patience = 10;
  std::size_t batch_size = 1;
  bool freeze_encoder = false;
  /// false replaces intent prompts with a linear head over [CLS] q [SEP].
  bool prompt_learning = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 23;

  /// Throws Config on an empty grid, non-positive rates or zero counts.
  void validate() const;
};

/// Bare query tokens plus, under QueryAdapt, their pooled encoding from the
/// frozen pretrained copy.
template <typename T>
struct QueryInput {
  std::vector<TokenId> tokens;
  RowVector<T> frozen_pooled;
};

/// Scores a query against every intent of a fixed schema.
///
/// The trainable model carries the strategy-specific tensors next to the
/// encoder: "transfer.linear.logits" (1x2), "transfer.mlp" (2k -> k -> k,
/// applied to each bank row) and "plft.head" (k -> C).
template <typename T>
class IntentClassifier {
 public:
  IntentClassifier(Model<T> model, std::optional<Model<T>> frozen, TransferStrategy strategy, bool prompt_learning,
                   std::vector<std::vector<TokenId>> intent_tokens);

  TransferStrategy strategy() const { return strategy_; }
  bool prompt_learning() const { return prompt_learning_; }
  std::size_t num_classes() const { return intent_tokens_.size(); }
  const std::vector<std::vector<TokenId>>& intent_tokens() const { return intent_tokens_; }

  Model<T>& model() { return model_; }
  const Model<T>& model() const { return model_; }
  const Model<T>* frozen() const { return frozen_ ? &*frozen_ : nullptr; }

  QueryInput<T> prepare(std::vector<TokenId> tokens) const;

  /// m x k query-intent tokens for this query under the strategy.
  Matrix<T> qi_tokens(const QueryInput<T>& input) const;
  /// (λ_qq, λ_qa) for LinearGlobal and QueryAdapt; nullopt otherwise.
  std::optional<AttentionWeights<T>> mixing_weights(const QueryInput<T>& input) const;

  std::vector<T> logits(const QueryInput<T>& input) const;
  std::vector<T> probabilities(const QueryInput<T>& input) const;

  /// Returns -log p[label] and accumulates grad_scale * dLoss into the
  /// gradient slots of the trainable model (frozen tensors included).
  T loss_backward(const QueryInput<T>& input, IntentId label, T grad_scale, Rng* dropout = nullptr);

  template <typename U>
  IntentClassifier<U> cast() const {
    std::optional<Model<U>> frozen;
    if (frozen_) frozen = frozen_->template cast<U>();
    return IntentClassifier<U>(model_.template cast<U>(), std::move(frozen), strategy_, prompt_learning_,
                               intent_tokens_);
  }

 private:
  struct QiTrace;
  Matrix<T> qi_forward(const QueryInput<T>& input, QiTrace* trace) const;
  void qi_backward(const QiTrace& trace, const Matrix<T>& grad);
  PromptSequence intent_prompt(const QueryInput<T>& input, std::size_t c) const;

  Model<T> model_;
  std::optional<Model<T>> frozen_;
  TransferStrategy strategy_;
  bool prompt_learning_;
  std::vector<std::vector<TokenId>> intent_tokens_;
  std::optional<TensorId> linear_logits_;
  std::optional<MlpIds> generator_;
  std::optional<LinearIds> plain_head_;
};

extern template class IntentClassifier<float>;
extern template class IntentClassifier<double>;

/// Pretrained starting point for fine-tuning. `relations` lists the relation
/// kinds whose banks were trained (empty for text-only or no pretraining).
struct PretrainedModel {
  Model<float> model;
  std::vector<RelationKind> relations;

  bool has_relation(RelationKind kind) const;
};

/// Intent names encoded with the vocabulary; throws Data for a name that
/// encodes to nothing or only to UNK.
std::vector<std::vector<TokenId>> encode_intents(const IntentSchema& schema, const Vocabulary& vocab);

/// Copies the pretrained model, appends the strategy tensors, initializes
/// them (and the class head and qi bank) from config.seed and sets the
/// trainable flags. Throws Config when the strategy needs relation banks the
/// pretrained model lacks.
IntentClassifier<float> prepare_classifier(const PretrainedModel& pretrained, const IntentSchema& schema,
                                           const Vocabulary& vocab, const FinetuneConfig& config);

struct FinetuneEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct GridRun {
  double learning_rate = 0.0;
  double best_validation_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::vector<FinetuneEpoch> epochs;
};

struct FinetuneResult {
  IntentClassifier<float> classifier;
  double learning_rate = 0.0;
  double validation_accuracy = 0.0;
  std::vector<GridRun> grid;
};

/// Grid search over config.learning_rate_grid with early stopping on
/// validation accuracy; the winner is the best validation accuracy, ties
/// going to the lower rate.
FinetuneResult finetune(const FewShotEpisode& episode, const IntentSchema& schema, const Vocabulary& vocab,
                        const PretrainedModel& pretrained, const FinetuneConfig& config);

double classify_accuracy(const IntentClassifier<float>& classifier, const std::vector<QueryInput<float>>& inputs,
                         const std::vector<IntentId>& labels);

/// Argmax with ties to the lower index.
template <typename T>
IntentId argmax(const std::vector<T>& values) {
  IntentId best = 0;
  for (IntentId i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

enum class Dominance : std::uint8_t { QueryQuery, QueryAnswer };

/// QueryQuery iff λ_qq > λ_qa; an exact tie counts as QueryAnswer.
Dominance dominance_category(const AttentionWeights<float>& weights);
const char* dominance_name(Dominance dominance);

}  // namespace relprompt
