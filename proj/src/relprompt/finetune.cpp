#include "relprompt/finetune.hpp"

#include "relprompt/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <numeric>

namespace relprompt {

namespace {

bool starts_with(std::string_view text, std::string_view prefix) { return text.substr(0, prefix.size()) == prefix; }

template <typename T>
std::optional<LinearIds> find_linear(const ParameterStore<T>& params, const std::string& name) {
  const auto weight = params.find(name + ".weight");
  const auto bias = params.find(name + ".bias");
  if (!weight || !bias) return std::nullopt;
  return LinearIds{*weight, *bias};
}

template <typename T>
std::optional<MlpIds> find_mlp(const ParameterStore<T>& params, const std::string& name) {
  const auto hidden = find_linear(params, name + ".dense");
  const auto output = find_linear(params, name + ".out");
  if (!hidden || !output) return std::nullopt;
  return MlpIds{*hidden, *output};
}

template <typename T>
TensorId relation_id(const Model<T>& model, RelationKind kind) {
  return model.layout().relation[static_cast<int>(kind)];
}

}  // namespace

const char* strategy_name(TransferStrategy strategy) {
  switch (strategy) {
    case TransferStrategy::FreshRandom: return "said";
    case TransferStrategy::LinearGlobal: return "linear";
    case TransferStrategy::MlpGenerator: return "mlp";
    case TransferStrategy::QueryAdapt: return "queryadapt";
  }
  return "?";
}

TransferStrategy parse_strategy(std::string_view name) {
  for (const auto s : {TransferStrategy::FreshRandom, TransferStrategy::LinearGlobal, TransferStrategy::MlpGenerator,
                       TransferStrategy::QueryAdapt}) {
    if (name == strategy_name(s)) return s;
  }
  throw_config(fmt::format("unknown strategy '{}' (expected said, linear, mlp or queryadapt)", name));
}

bool uses_relation_banks(TransferStrategy strategy) { return strategy != TransferStrategy::FreshRandom; }

void FinetuneConfig::validate() const {
  if (learning_rate_grid.empty()) throw_config("learning_rate_grid must not be empty");
  for (const double lr : learning_rate_grid) {
    if (!(lr > 0.0)) throw_config(fmt::format("learning rate {} must be positive", lr));
  }
  if (max_epochs == 0) throw_config("max_epochs must be at least 1");
  if (patience == 0) throw_config("patience must be at least 1");
  if (batch_size == 0) throw_config("batch_size must be at least 1");
}

template <typename T>
struct IntentClassifier<T>::QiTrace {
  AttentionWeights<T> weights;
  MlpTrace<T> mlp;
};

template <typename T>
IntentClassifier<T>::IntentClassifier(Model<T> model, std::optional<Model<T>> frozen, TransferStrategy strategy,
                                      bool prompt_learning, std::vector<std::vector<TokenId>> intent_tokens)
    : model_(std::move(model)),
      frozen_(std::move(frozen)),
      strategy_(strategy),
      prompt_learning_(prompt_learning),
      intent_tokens_(std::move(intent_tokens)) {
  if (intent_tokens_.size() < 2) throw_config("a classifier needs at least two intents");
  const auto& params = model_.params();
  linear_logits_ = params.find("transfer.linear.logits");
  generator_ = find_mlp(params, "transfer.mlp");
  plain_head_ = find_linear(params, "plft.head");
  if (!prompt_learning_) {
    if (!plain_head_ || params.value(plain_head_->weight).cols() != static_cast<Eigen::Index>(num_classes())) {
      throw_data(fmt::format("classification head 'plft.head' missing or not sized for {} intents", num_classes()));
    }
    return;
  }
  if (strategy_ == TransferStrategy::LinearGlobal && !linear_logits_) {
    throw_data("linear strategy needs tensor 'transfer.linear.logits'");
  }
  if (strategy_ == TransferStrategy::MlpGenerator && !generator_) throw_data("mlp strategy needs tensors 'transfer.mlp.*'");
  if (strategy_ == TransferStrategy::QueryAdapt) {
    if (!frozen_) throw_data("queryadapt strategy needs the frozen pretrained encoder");
    if (!(frozen_->config() == model_.config())) throw_data("frozen encoder config differs from the trainable model");
  }
}

template <typename T>
QueryInput<T> IntentClassifier<T>::prepare(std::vector<TokenId> tokens) const {
  if (tokens.empty()) throw_data("query encodes to no tokens");
  QueryInput<T> input;
  input.tokens = std::move(tokens);
  if (prompt_learning_ && strategy_ == TransferStrategy::QueryAdapt) {
    input.frozen_pooled = frozen_->encode_pooled(assemble_text_prompt(input.tokens, model_.config().max_len));
  }
  return input;
}

template <typename T>
PromptSequence IntentClassifier<T>::intent_prompt(const QueryInput<T>& input, std::size_t c) const {
  const auto& cfg = model_.config();
  return assemble_intent_prompt(input.tokens, intent_tokens_[c], cfg.relation_tokens, cfg.max_len);
}

template <typename T>
Matrix<T> IntentClassifier<T>::qi_forward(const QueryInput<T>& input, QiTrace* trace) const {
  const auto& params = model_.params();
  const auto& qq = model_.bank(RelationKind::QueryQuery);
  const auto& qa = model_.bank(RelationKind::QueryAnswer);
  switch (strategy_) {
    case TransferStrategy::FreshRandom:
      return model_.bank(RelationKind::QueryIntent);
    case TransferStrategy::LinearGlobal: {
      const auto& logits = params.value(*linear_logits_);
      const auto w = simplex_weights<T>(logits(0, 0), logits(0, 1));
      if (trace) trace->weights = w;
      return generate_qi_tokens(w, qq, qa);
    }
    case TransferStrategy::MlpGenerator: {
      Matrix<T> joined(qq.rows(), qq.cols() + qa.cols());
      joined << qq, qa;
      return mlp_forward(params, *generator_, joined, trace ? &trace->mlp : nullptr);
    }
    case TransferStrategy::QueryAdapt: {
      if (input.frozen_pooled.size() == 0) throw_data("query input was not prepared for queryadapt");
      const auto w = model_.adapt_weights(input.frozen_pooled, trace ? &trace->mlp : nullptr);
      if (trace) trace->weights = w;
      return generate_qi_tokens(w, qq, qa);
    }
  }
  throw_config("unknown transfer strategy");
}

template <typename T>
void IntentClassifier<T>::qi_backward(const QiTrace& trace, const Matrix<T>& grad) {
  auto& params = model_.params();
  const auto qq_id = relation_id(model_, RelationKind::QueryQuery);
  const auto qa_id = relation_id(model_, RelationKind::QueryAnswer);
  switch (strategy_) {
    case TransferStrategy::FreshRandom:
      params.grad(relation_id(model_, RelationKind::QueryIntent)) += grad;
      return;
    case TransferStrategy::MlpGenerator: {
      const Matrix<T> grad_in = mlp_backward(params, *generator_, trace.mlp, grad);
      const auto k = grad.cols();
      params.grad(qq_id) += grad_in.leftCols(k);
      params.grad(qa_id) += grad_in.rightCols(k);
      return;
    }
    case TransferStrategy::LinearGlobal:
    case TransferStrategy::QueryAdapt: {
      const auto& w = trace.weights;
      const T g_qq = grad.cwiseProduct(params.value(qq_id)).sum();
      const T g_qa = grad.cwiseProduct(params.value(qa_id)).sum();
      params.grad(qq_id) += w.query_query * grad;
      params.grad(qa_id) += w.query_answer * grad;
      if (strategy_ == TransferStrategy::QueryAdapt) {
        model_.adapt_backward(trace.mlp, w, g_qq, g_qa);
      } else {
        const T mean = w.query_query * g_qq + w.query_answer * g_qa;
        auto& g = params.grad(*linear_logits_);
        g(0, 0) += w.query_query * (g_qq - mean);
        g(0, 1) += w.query_answer * (g_qa - mean);
      }
      return;
    }
  }
}

template <typename T>
Matrix<T> IntentClassifier<T>::qi_tokens(const QueryInput<T>& input) const {
  return qi_forward(input, nullptr);
}

template <typename T>
std::optional<AttentionWeights<T>> IntentClassifier<T>::mixing_weights(const QueryInput<T>& input) const {
  if (!prompt_learning_) return std::nullopt;
  if (strategy_ != TransferStrategy::LinearGlobal && strategy_ != TransferStrategy::QueryAdapt) return std::nullopt;
  QiTrace trace;
  qi_forward(input, &trace);
  return trace.weights;
}

template <typename T>
std::vector<T> IntentClassifier<T>::logits(const QueryInput<T>& input) const {
  std::vector<T> out(num_classes());
  if (!prompt_learning_) {
    const Matrix<T> pooled = model_.encode_pooled(assemble_text_prompt(input.tokens, model_.config().max_len));
    const Matrix<T> z = linear_forward(model_.params(), *plain_head_, pooled);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = z(0, static_cast<Eigen::Index>(c));
    return out;
  }
  const Matrix<T> qi = qi_forward(input, nullptr);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = model_.class_logit(model_.encode_pooled(intent_prompt(input, c), &qi));
  return out;
}

template <typename T>
std::vector<T> IntentClassifier<T>::probabilities(const QueryInput<T>& input) const {
  const auto z = logits(input);
  return softmax(std::span<const T>(z));
}

template <typename T>
T IntentClassifier<T>::loss_backward(const QueryInput<T>& input, IntentId label, T grad_scale, Rng* dropout) {
  if (label >= num_classes()) throw_data(fmt::format("label {} outside {} intents", label, num_classes()));
  const auto C = num_classes();
  if (!prompt_learning_) {
    const auto prompt = assemble_text_prompt(input.tokens, model_.config().max_len);
    const std::size_t n = prompt.content_length();
    EncoderTrace<T> trace;
    const Matrix<T> hidden = model_.encode(model_.embed(prompt, nullptr, n), std::vector<bool>(n, false), &trace, dropout);
    const Matrix<T> pooled = hidden.topRows(1);
    const Matrix<T> z = linear_forward(model_.params(), *plain_head_, pooled);
    const auto logp = log_softmax(std::span<const T>(z.data(), C));
    Matrix<T> grad_z(1, static_cast<Eigen::Index>(C));
    for (std::size_t c = 0; c < C; ++c) {
      grad_z(0, static_cast<Eigen::Index>(c)) = grad_scale * (std::exp(logp[c]) - (c == label ? T(1) : T(0)));
    }
    Matrix<T> grad_hidden = Matrix<T>::Zero(hidden.rows(), hidden.cols());
    grad_hidden.row(0) = linear_backward(model_.params(), *plain_head_, pooled, grad_z).row(0);
    model_.embed_backward(prompt, model_.encode_backward(trace, grad_hidden), nullptr);
    return -logp[label];
  }

  QiTrace qi_trace;
  const Matrix<T> qi = qi_forward(input, &qi_trace);
  std::vector<PromptSequence> prompts(C);
  std::vector<EncoderTrace<T>> traces(C);
  std::vector<MlpTrace<T>> heads(C);
  std::vector<Eigen::Index> lengths(C);
  std::vector<T> z(C);
  for (std::size_t c = 0; c < C; ++c) {
    prompts[c] = intent_prompt(input, c);
    const std::size_t n = prompts[c].content_length();
    lengths[c] = static_cast<Eigen::Index>(n);
    const Matrix<T> hidden =
        model_.encode(model_.embed(prompts[c], &qi, n), std::vector<bool>(n, false), &traces[c], dropout);
    z[c] = model_.class_logit(Model<T>::pool(hidden), &heads[c]);
  }
  const auto logp = log_softmax(std::span<const T>(z));
  Matrix<T> grad_qi = Matrix<T>::Zero(qi.rows(), qi.cols());
  for (std::size_t c = 0; c < C; ++c) {
    const T g = grad_scale * (std::exp(logp[c]) - (c == label ? T(1) : T(0)));
    Matrix<T> grad_hidden = Matrix<T>::Zero(lengths[c], qi.cols());
    grad_hidden.row(0) = model_.class_logit_backward(heads[c], g);
    model_.embed_backward(prompts[c], model_.encode_backward(traces[c], grad_hidden), &grad_qi);
  }
  qi_backward(qi_trace, grad_qi);
  return -logp[label];
}

template class IntentClassifier<float>;
template class IntentClassifier<double>;

bool PretrainedModel::has_relation(RelationKind kind) const {
  return std::find(relations.begin(), relations.end(), kind) != relations.end();
}

std::vector<std::vector<TokenId>> encode_intents(const IntentSchema& schema, const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> out;
  for (const auto& name : schema.labels()) {
    auto ids = vocab.encode(name);
    const bool known = std::any_of(ids.begin(), ids.end(), [](TokenId id) { return id != special::kUnk; });
    if (!known) throw_data(fmt::format("intent name '{}' is not covered by the vocabulary", name));
    out.push_back(std::move(ids));
  }
  return out;
}

IntentClassifier<float> prepare_classifier(const PretrainedModel& pretrained, const IntentSchema& schema,
                                           const Vocabulary& vocab, const FinetuneConfig& config) {
  config.validate();
  const auto& cfg = pretrained.model.config();
  if (cfg.vocab_size != vocab.size()) {
    throw_data(fmt::format("model vocab_size {} does not match the vocabulary ({} tokens)", cfg.vocab_size,
                           vocab.size()));
  }
  const bool banks = config.prompt_learning && uses_relation_banks(config.strategy);
  if (banks) {
    for (const auto kind : {RelationKind::QueryQuery, RelationKind::QueryAnswer}) {
      if (!pretrained.has_relation(kind)) {
        throw_config(fmt::format("strategy '{}' needs a pretrained '{}' relation bank, which this checkpoint lacks",
                                 strategy_name(config.strategy), relation_tag(kind)));
      }
    }
  }
  auto intents = encode_intents(schema, vocab);
  ParameterStore<float> store = pretrained.model.params();
  const std::size_t k = cfg.hidden_dim;
  if (config.prompt_learning && config.strategy == TransferStrategy::LinearGlobal) {
    store.add("transfer.linear.logits", 1, 2);
  }
  if (config.prompt_learning && config.strategy == TransferStrategy::MlpGenerator) {
    declare_mlp(store, "transfer.mlp", 2 * k, k, k);
  }
  if (!config.prompt_learning) declare_linear(store, "plft.head", k, schema.size());

  for (auto& t : store.tensors()) {
    const std::string_view name = t.name;
    const bool fresh = name == "relation.qi" || starts_with(name, "class_head.") || starts_with(name, "adapt_head.") ||
                       starts_with(name, "transfer.") || starts_with(name, "plft.");
    if (fresh) init_tensor(t, config.seed);
    bool trainable = !config.freeze_encoder;
    if (name == "relation.qq" || name == "relation.qa" || starts_with(name, "mlm.")) {
      trainable = false;
    } else if (name == "relation.qi") {
      trainable = config.prompt_learning && config.strategy == TransferStrategy::FreshRandom;
    } else if (starts_with(name, "adapt_head.")) {
      trainable = config.prompt_learning && config.strategy == TransferStrategy::QueryAdapt;
    } else if (starts_with(name, "class_head.")) {
      trainable = config.prompt_learning;
    } else if (starts_with(name, "transfer.") || starts_with(name, "plft.")) {
      trainable = true;
    }
    t.trainable = trainable;
  }

  std::optional<Model<float>> frozen;
  if (config.prompt_learning && config.strategy == TransferStrategy::QueryAdapt) {
    ParameterStore<float> copy = pretrained.model.params();
    copy.set_trainable(false);
    frozen.emplace(cfg, std::move(copy));
  }
  return IntentClassifier<float>(Model<float>(cfg, std::move(store)), std::move(frozen), config.strategy,
                                 config.prompt_learning, std::move(intents));
}

double classify_accuracy(const IntentClassifier<float>& classifier, const std::vector<QueryInput<float>>& inputs,
                         const std::vector<IntentId>& labels) {
  if (inputs.empty()) throw_data("accuracy over an empty split is undefined");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (argmax(classifier.logits(inputs[i])) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

namespace {

struct EncodedSplit {
  std::vector<QueryInput<float>> inputs;
  std::vector<IntentId> labels;
};

EncodedSplit encode_split(const IntentClassifier<float>& classifier, const std::vector<LabeledQuery>& split,
                          const Vocabulary& vocab, std::size_t num_classes, const char* name) {
  EncodedSplit out;
  for (const auto& ex : split) {
    if (ex.intent >= num_classes) {
      throw_data(fmt::format("{} example '{}' has intent id {} outside the schema", name, ex.query, ex.intent));
    }
    out.inputs.push_back(classifier.prepare(vocab.encode(ex.query)));
    out.labels.push_back(ex.intent);
  }
  return out;
}

}  // namespace

FinetuneResult finetune(const FewShotEpisode& episode, const IntentSchema& schema, const Vocabulary& vocab,
                        const PretrainedModel& pretrained, const FinetuneConfig& config) {
  const IntentClassifier<float> base = prepare_classifier(pretrained, schema, vocab, config);
  if (episode.train.empty()) throw_data("episode has no training examples");
  if (episode.validation.empty()) throw_data("episode has no validation examples");
  const auto train = encode_split(base, episode.train, vocab, schema.size(), "train");
  const auto validation = encode_split(base, episode.validation, vocab, schema.size(), "validation");

  std::optional<FinetuneResult> best;
  const Rng root(config.seed);
  for (std::size_t g = 0; g < config.learning_rate_grid.size(); ++g) {
    const double lr = config.learning_rate_grid[g];
    IntentClassifier<float> classifier = base;
    AdamOptimizer optimizer({lr, config.beta1, config.beta2, config.epsilon});
    Rng order_rng = root.fork(100 + g);
    Rng dropout_rng = root.fork(200 + g);
    std::vector<std::size_t> order(train.inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    GridRun run;
    run.learning_rate = lr;
    run.best_validation_accuracy = -1.0;
    ParameterStore<float> best_params = classifier.model().params();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      order_rng.shuffle(std::span(order));
      double total = 0.0;
      for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
        const std::size_t end = std::min(order.size(), begin + config.batch_size);
        auto& params = classifier.model().params();
        params.zero_grad();
        const float scale = 1.0f / static_cast<float>(end - begin);
        for (std::size_t b = begin; b < end; ++b) {
          total += classifier.loss_backward(train.inputs[order[b]], train.labels[order[b]], scale, &dropout_rng);
        }
        if (!std::isfinite(total)) {
          throw_numeric(fmt::format("fine-tuning loss became non-finite (rate {}, epoch {})", lr, epoch));
        }
        optimizer.step(params);
      }
      classifier.model().params().check_finite();
      FinetuneEpoch log;
      log.epoch = epoch;
      log.train_loss = total / static_cast<double>(order.size());
      log.validation_accuracy = classify_accuracy(classifier, validation.inputs, validation.labels);
      log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      run.epochs.push_back(log);
      if (log.validation_accuracy > run.best_validation_accuracy) {
        run.best_validation_accuracy = log.validation_accuracy;
        run.best_epoch = epoch;
        best_params = classifier.model().params();
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
    for (std::size_t i = 0; i < best_params.tensors().size(); ++i) {
      classifier.model().params().tensors()[i].value = best_params.tensors()[i].value;
    }
    classifier.model().params().zero_grad();

    const bool better = !best || run.best_validation_accuracy > best->validation_accuracy ||
                        (run.best_validation_accuracy == best->validation_accuracy && lr < best->learning_rate);
    std::vector<GridRun> grid = best ? std::move(best->grid) : std::vector<GridRun>{};
    grid.push_back(run);
    if (better) {
      best.emplace(FinetuneResult{std::move(classifier), lr, run.best_validation_accuracy, {}});
    }
    best->grid = std::move(grid);
  }
  return std::move(*best);
}

Dominance dominance_category(const AttentionWeights<float>& weights) {
  return weights.query_query > weights.query_answer ? Dominance::QueryQuery : Dominance::QueryAnswer;
}

const char* dominance_name(Dominance dominance) {
  return dominance == Dominance::QueryQuery ? "qq-dominated" : "qa-dominated";
}

}  // namespace relprompt
