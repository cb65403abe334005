#pragma once

#include "relprompt/numerics.hpp"
#include "relprompt/prompt.hpp"
#include "relprompt/rng.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace relprompt {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t max_len = 64;
  std::size_t relation_tokens = 3;
  double dropout_rate = 0.0;
  bool tie_mlm_weights = true;

  /// Throws Config when an invariant is violated.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

template <typename T>
struct Tensor {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = true;
};

struct TensorId {
  std::size_t index = 0;
};

template <typename T>
class ParameterStore {
 public:
  TensorId add(std::string name, Eigen::Index rows, Eigen::Index cols);

  Tensor<T>& operator[](TensorId id) { return tensors_[id.index]; }
  const Tensor<T>& operator[](TensorId id) const { return tensors_[id.index]; }
  Matrix<T>& value(TensorId id) { return tensors_[id.index].value; }
  const Matrix<T>& value(TensorId id) const { return tensors_[id.index].value; }
  Matrix<T>& grad(TensorId id) { return tensors_[id.index].grad; }

  std::optional<TensorId> find(std::string_view name) const;
  TensorId require(std::string_view name) const;

  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  void zero_grad();
  void set_trainable(bool trainable);
  /// Throws Numeric naming the first tensor with a non-finite value.
  void check_finite() const;

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& t : tensors_) {
      const auto id = out.add(t.name, t.value.rows(), t.value.cols());
      out[id].value = t.value.template cast<U>();
      out[id].trainable = t.trainable;
    }
    return out;
  }

 private:
  std::vector<Tensor<T>> tensors_;
};

struct LinearIds {
  TensorId weight;  // in x out
  TensorId bias;    // 1 x out
};

/// Two-layer perceptron: GELU between the layers.
struct MlpIds {
  LinearIds hidden;
  LinearIds output;
};

struct LayerIds {
  LinearIds query, key, value, attn_out;
  TensorId ln1_gain, ln1_bias;
  LinearIds ffn_in, ffn_out;
  TensorId ln2_gain, ln2_bias;
};

struct ModelLayout {
  TensorId word;
  TensorId position;
  std::array<TensorId, kRelationKinds> relation;  // indexed by RelationKind
  std::vector<LayerIds> layers;
  std::optional<TensorId> mlm_weight;  // absent when tied to word embeddings
  TensorId mlm_bias;
  MlpIds class_head;  // k -> k -> 1
  MlpIds adapt_head;  // k -> k -> 2
};

template <typename T>
struct MlpTrace {
  Matrix<T> input;
  Matrix<T> pre_activation;
  Matrix<T> activation;
};

template <typename T>
struct LayerNormTrace {
  Matrix<T> normalized;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <typename T>
struct LayerTrace {
  Matrix<T> input;
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> probs;  // per head, n x n
  Matrix<T> context;
  Matrix<T> attn_dropout;  // empty when dropout is off
  LayerNormTrace<T> ln1;
  Matrix<T> hidden1;
  Matrix<T> ffn_pre;
  Matrix<T> ffn_act;
  Matrix<T> ffn_dropout;
  LayerNormTrace<T> ln2;
};

template <typename T>
struct EncoderTrace {
  std::vector<LayerTrace<T>> layers;
  std::vector<bool> pad_mask;
};

/// Convex mixing weights over the query-query and query-answer relations.
template <typename T>
struct AttentionWeights {
  T query_query = T(0.5);
  T query_answer = T(0.5);
};

template <typename T>
Matrix<T> linear_forward(const ParameterStore<T>& params, const LinearIds& ids, const Matrix<T>& x);
/// Accumulates weight/bias gradients and returns the gradient w.r.t. x.
template <typename T>
Matrix<T> linear_backward(ParameterStore<T>& params, const LinearIds& ids, const Matrix<T>& x,
                          const Matrix<T>& grad_out);

template <typename T>
Matrix<T> mlp_forward(const ParameterStore<T>& params, const MlpIds& ids, const Matrix<T>& x,
                      MlpTrace<T>* trace = nullptr);
template <typename T>
Matrix<T> mlp_backward(ParameterStore<T>& params, const MlpIds& ids, const MlpTrace<T>& trace,
                       const Matrix<T>& grad_out);

LinearIds declare_linear(ParameterStore<float>& params, const std::string& name, std::size_t in, std::size_t out);
MlpIds declare_mlp(ParameterStore<float>& params, const std::string& name, std::size_t in, std::size_t hidden,
                   std::size_t out);
LinearIds bind_linear(const ParameterStore<float>& params, const std::string& name);
MlpIds bind_mlp(const ParameterStore<float>& params, const std::string& name);

/// Truncated normal (sigma 0.02) for weight matrices, zero biases, unit
/// layer-norm gains. Each tensor draws from a stream keyed by its name.
void init_tensor(Tensor<float>& tensor, std::uint64_t seed);

/// λ_qq·bank_qq + λ_qa·bank_qa, row by row.
template <typename T>
Matrix<T> generate_qi_tokens(const AttentionWeights<T>& weights, const Matrix<T>& bank_qq, const Matrix<T>& bank_qa) {
  return weights.query_query * bank_qq + weights.query_answer * bank_qa;
}

/// Softmax of two logits onto the 1-simplex.
template <typename T>
AttentionWeights<T> simplex_weights(T logit_qq, T logit_qa) {
  const T values[2] = {logit_qq, logit_qa};
  const auto p = softmax(std::span<const T>(values, 2));
  return {p[0], p[1]};
}

/// Transformer encoder with relation-token banks and the MLM, class and
/// adapt heads. Post-norm blocks, GELU feed-forward, learned positions.
template <typename T>
class Model {
 public:
  explicit Model(const EncoderConfig& config);
  Model(const EncoderConfig& config, ParameterStore<T> params);

  const EncoderConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  const ModelLayout& layout() const { return layout_; }

  const Matrix<T>& bank(RelationKind kind) const { return params_.value(layout_.relation[static_cast<int>(kind)]); }

  /// Rows 0..length-1 of the input embedding (0 = whole prompt).
  Matrix<T> embed(const PromptSequence& prompt, const Matrix<T>* qi_override = nullptr,
                  std::size_t length = 0) const;
  /// Scatters `grad` into word/position/bank gradients. With a non-null
  /// `qi_override_grad`, query-intent slot gradients go there instead of the bank.
  void embed_backward(const PromptSequence& prompt, const Matrix<T>& grad, Matrix<T>* qi_override_grad);

  Matrix<T> encode(const Matrix<T>& embeddings, const std::vector<bool>& pad_mask,
                   EncoderTrace<T>* trace = nullptr, Rng* dropout = nullptr) const;
  Matrix<T> encode_backward(const EncoderTrace<T>& trace, const Matrix<T>& grad_hidden);

  static RowVector<T> pool(const Matrix<T>& hidden) { return hidden.row(0); }

  /// Pooled representation of a prompt without dropout (content rows only).
  RowVector<T> encode_pooled(const PromptSequence& prompt, const Matrix<T>* qi_override = nullptr) const;

  Matrix<T> mlm_logits(const Matrix<T>& hidden, std::span<const std::size_t> positions) const;
  /// Returns the gradient w.r.t. `hidden` (same shape).
  Matrix<T> mlm_backward(const Matrix<T>& hidden, std::span<const std::size_t> positions,
                         const Matrix<T>& grad_logits);

  T class_logit(const RowVector<T>& pooled, MlpTrace<T>* trace = nullptr) const;
  RowVector<T> class_logit_backward(const MlpTrace<T>& trace, T grad_logit);

  AttentionWeights<T> adapt_weights(const RowVector<T>& pooled, MlpTrace<T>* trace = nullptr) const;
  /// Backpropagates dL/dλ through the softmax and the adapt head.
  RowVector<T> adapt_backward(const MlpTrace<T>& trace, const AttentionWeights<T>& weights, T grad_qq, T grad_qa);

  template <typename U>
  Model<U> cast() const {
    return Model<U>(config_, params_.template cast<U>());
  }

 private:
  Matrix<T> layer_forward(const LayerIds& ids, const Matrix<T>& x, const std::vector<bool>& pad_mask,
                          LayerTrace<T>* trace, Rng* dropout) const;
  Matrix<T> layer_backward(const LayerIds& ids, const LayerTrace<T>& trace, const std::vector<bool>& pad_mask,
                           const Matrix<T>& grad_out);

  EncoderConfig config_;
  ParameterStore<T> params_;
  ModelLayout layout_;
};

/// Declares every base tensor for `config` (zero-valued).
ParameterStore<float> declare_parameters(const EncoderConfig& config);
/// Resolves tensor ids by name; throws Data on missing or misshapen tensors.
template <typename T>
ModelLayout bind_layout(const ParameterStore<T>& params, const EncoderConfig& config);

Model<float> init_parameters(const EncoderConfig& config, std::uint64_t seed);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace relprompt
