#include "relprompt/pretrain.hpp"

#include "relprompt/error.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <numeric>

namespace relprompt {

void PretrainConfig::validate() const {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw_config(fmt::format("mask_ratio {} must lie in (0,1)", mask_ratio));
  if (epochs == 0) throw_config("epochs must be at least 1");
  if (batch_size == 0) throw_config("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw_config("learning_rate must be positive");
  if (!text_only && !use_query_query && !use_query_answer) {
    throw_config("relation mix is empty; enable qq and/or qa or select text-only pretraining");
  }
}

std::vector<PromptSequence> build_pretrain_set(const std::vector<Session>& sessions, const Vocabulary& vocab,
                                               const PretrainConfig& config, std::size_t m, std::size_t max_len) {
  config.validate();
  std::vector<PromptSequence> prompts;
  for (const auto& session : sessions) {
    std::vector<std::vector<TokenId>> queries;
    for (const auto& turn : session.turns) queries.push_back(vocab.encode(turn.query));
    for (std::size_t i = 0; i < session.turns.size(); ++i) {
      if (queries[i].empty()) continue;
      if (config.text_only) {
        prompts.push_back(assemble_text_prompt(queries[i], max_len));
        continue;
      }
      if (config.use_query_query && session.turns.size() >= 2) {
        for (const auto j : partners(session, i, config.pairing)) {
          if (queries[j].empty()) continue;
          prompts.push_back(assemble_relation_prompt(queries[i], RelationKind::QueryQuery, queries[j], m, max_len));
        }
      }
      if (config.use_query_answer && session.turns[i].has_answer) {
        const auto answer = vocab.encode(session.turns[i].answer);
        if (!answer.empty()) {
          prompts.push_back(assemble_relation_prompt(queries[i], RelationKind::QueryAnswer, answer, m, max_len));
        }
      }
    }
  }
  return prompts;
}

MaskPlan make_mask_plan(const PromptSequence& prompt, double mask_ratio, std::size_t vocab_size, Rng& rng) {
  auto candidates = maskable_positions(prompt);
  MaskPlan plan;
  if (candidates.empty()) return plan;
  auto count = static_cast<std::size_t>(std::floor(mask_ratio * static_cast<double>(candidates.size()) + 0.5));
  count = std::clamp<std::size_t>(count, 1, candidates.size());
  // Partial Fisher-Yates: the first `count` entries form the sample.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + rng.below(static_cast<std::uint32_t>(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  const auto regular = static_cast<std::uint32_t>(vocab_size - special::kCount);
  for (const auto pos : candidates) {
    const TokenId original = prompt.elements[pos].token;
    const double u = rng.uniform();
    MaskAction action = MaskAction::KeepOriginal;
    TokenId replacement = original;
    if (u < 0.8) {
      action = MaskAction::ReplaceWithMask;
      replacement = special::kMask;
    } else if (u < 0.9) {
      action = MaskAction::ReplaceWithRandom;
      replacement = static_cast<TokenId>(special::kCount + rng.below(regular));
    }
    plan.positions.push_back(pos);
    plan.actions.push_back(action);
    plan.targets.push_back(original);
    plan.replacements.push_back(replacement);
  }
  return plan;
}

PromptSequence apply_mask_plan(const PromptSequence& prompt, const MaskPlan& plan) {
  PromptSequence masked = prompt;
  for (std::size_t i = 0; i < plan.positions.size(); ++i) {
    masked.elements[plan.positions[i]].token = plan.replacements[i];
  }
  return masked;
}

template <typename T>
T mlm_loss(const Matrix<T>& logits, const MaskPlan& plan, Matrix<T>* grad, T grad_scale) {
  if (plan.positions.empty()) return T(0);
  const Matrix<T> log_probs = log_softmax_rows(logits);
  T total = 0;
  for (std::size_t i = 0; i < plan.targets.size(); ++i) {
    total -= log_probs(static_cast<Eigen::Index>(i), plan.targets[i]);
  }
  const T count = static_cast<T>(plan.targets.size());
  if (grad) {
    *grad = log_probs.array().exp();
    for (std::size_t i = 0; i < plan.targets.size(); ++i) (*grad)(static_cast<Eigen::Index>(i), plan.targets[i]) -= T(1);
    *grad *= grad_scale / count;
  }
  return total / count;
}

template float mlm_loss(const Matrix<float>&, const MaskPlan&, Matrix<float>*, float);
template double mlm_loss(const Matrix<double>&, const MaskPlan&, Matrix<double>*, double);

template <typename T>
T mlm_forward_backward(Model<T>& model, const PromptSequence& masked, const MaskPlan& plan, Rng* dropout,
                       T grad_scale) {
  if (plan.positions.empty()) return T(0);
  const std::size_t n = masked.content_length();
  const Matrix<T> emb = model.embed(masked, nullptr, n);
  const std::vector<bool> pad(n, false);
  const bool backward = grad_scale > T(0);
  EncoderTrace<T> trace;
  const Matrix<T> hidden = model.encode(emb, pad, backward ? &trace : nullptr, dropout);
  const Matrix<T> logits = model.mlm_logits(hidden, plan.positions);
  const T count = static_cast<T>(plan.positions.size());
  Matrix<T> grad_logits;
  // mlm_loss scales its gradient by 1/count; undo that so the summed loss is differentiated.
  const T mean = mlm_loss(logits, plan, backward ? &grad_logits : nullptr, grad_scale * count);
  if (backward) {
    const Matrix<T> grad_hidden = model.mlm_backward(hidden, plan.positions, grad_logits);
    const Matrix<T> grad_emb = model.encode_backward(trace, grad_hidden);
    model.embed_backward(masked, grad_emb, nullptr);
  }
  return mean * count;
}

template float mlm_forward_backward(Model<float>&, const PromptSequence&, const MaskPlan&, Rng*, float);
template double mlm_forward_backward(Model<double>&, const PromptSequence&, const MaskPlan&, Rng*, double);

template <typename T>
T masked_nll(const Model<T>& model, const PromptSequence& masked, const MaskPlan& plan) {
  if (plan.positions.empty()) return T(0);
  const std::size_t n = masked.content_length();
  const Matrix<T> hidden = model.encode(model.embed(masked, nullptr, n), std::vector<bool>(n, false));
  return mlm_loss(model.mlm_logits(hidden, plan.positions), plan) * static_cast<T>(plan.positions.size());
}

template float masked_nll(const Model<float>&, const PromptSequence&, const MaskPlan&);
template double masked_nll(const Model<double>&, const PromptSequence&, const MaskPlan&);

double evaluate_mlm_loss(const Model<float>& model, const std::vector<PromptSequence>& prompts, double mask_ratio,
                         std::uint64_t seed) {
  Rng rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& prompt : prompts) {
    const auto plan = make_mask_plan(prompt, mask_ratio, model.config().vocab_size, rng);
    total += masked_nll<float>(model, apply_mask_plan(prompt, plan), plan);
    count += plan.positions.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

PretrainResult pretrain_model(Model<float> model, const std::vector<PromptSequence>& prompts,
                              const PretrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (prompts.empty()) throw_data("pretraining set is empty");
  PretrainResult result{std::move(model), AdamOptimizer(config.adam()), {}};
  auto& net = result.model;
  const Rng root(config.seed);
  Rng mask_rng = root.fork(11);
  Rng order_rng = root.fork(12);
  Rng dropout_rng = root.fork(13);
  std::vector<std::size_t> order(prompts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t batch_index = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    order_rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<MaskPlan> plans;
      std::size_t batch_tokens = 0;
      for (std::size_t b = begin; b < end; ++b) {
        plans.push_back(make_mask_plan(prompts[order[b]], config.mask_ratio, net.config().vocab_size, mask_rng));
        batch_tokens += plans.back().positions.size();
      }
      if (batch_tokens == 0) continue;
      net.params().zero_grad();
      const float scale = 1.0f / static_cast<float>(batch_tokens);
      double batch_loss = 0.0;
      for (std::size_t b = begin; b < end; ++b) {
        const auto& plan = plans[b - begin];
        batch_loss += mlm_forward_backward<float>(net, apply_mask_plan(prompts[order[b]], plan), plan,
                                                  &dropout_rng, scale);
      }
      if (!std::isfinite(batch_loss)) {
        throw_numeric(fmt::format("MLM loss became non-finite at batch {} (epoch {})", batch_index, epoch));
      }
      result.optimizer.step(net.params());
      epoch_loss += batch_loss;
      epoch_tokens += batch_tokens;
    }
    net.params().check_finite();
    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = epoch_tokens == 0 ? 0.0 : epoch_loss / static_cast<double>(epoch_tokens);
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

PretrainResult pretrain(const std::vector<Session>& sessions, const Vocabulary& vocab,
                        const EncoderConfig& model_config, const PretrainConfig& config,
                        const EpochCallback& on_epoch) {
  config.validate();
  if (model_config.vocab_size != vocab.size()) {
    throw_config(fmt::format("model vocab_size {} does not match the vocabulary ({} tokens)", model_config.vocab_size,
                             vocab.size()));
  }
  auto prompts = build_pretrain_set(sessions, vocab, config, model_config.relation_tokens, model_config.max_len);
  return pretrain_model(init_parameters(model_config, config.seed), prompts, config, on_epoch);
}

}  // namespace relprompt
