#include "relprompt/model.hpp"

#include "relprompt/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace relprompt {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStddev = 0.02;

std::uint64_t name_key(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

bool ends_with(std::string_view text, std::string_view suffix) {
  return text.size() >= suffix.size() && text.substr(text.size() - suffix.size()) == suffix;
}

template <typename T>
Matrix<T> layer_norm_forward(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                             LayerNormTrace<T>* trace) {
  const auto n = x.rows();
  const auto k = x.cols();
  Matrix<T> normalized(n, k);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).eval();
    const T var = centered.square().mean();
    inv_std(r) = T(1) / std::sqrt(var + T(kLayerNormEps));
    normalized.row(r) = centered * inv_std(r);
  }
  Matrix<T> out = (normalized.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (trace) {
    trace->normalized = std::move(normalized);
    trace->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
Matrix<T> layer_norm_backward(const LayerNormTrace<T>& trace, const Matrix<T>& gain, Matrix<T>& grad_gain,
                              Matrix<T>& grad_bias, const Matrix<T>& grad_out) {
  const auto k = static_cast<T>(grad_out.cols());
  grad_gain.row(0) += (grad_out.array() * trace.normalized.array()).colwise().sum().matrix();
  grad_bias.row(0) += grad_out.colwise().sum();
  const Matrix<T> grad_norm = grad_out.array().rowwise() * gain.row(0).array();
  Matrix<T> grad_in(grad_out.rows(), grad_out.cols());
  for (Eigen::Index r = 0; r < grad_out.rows(); ++r) {
    const T sum = grad_norm.row(r).sum();
    const T dot = grad_norm.row(r).dot(trace.normalized.row(r));
    grad_in.row(r) = (trace.inv_std(r) / k) *
                     (k * grad_norm.row(r).array() - sum - trace.normalized.row(r).array() * dot).matrix();
  }
  return grad_in;
}

template <typename T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix<T> mask(rows, cols);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? T(0) : scale;
  return mask;
}

template <typename T>
void require_finite(const Matrix<T>& m, std::size_t layer, const char* where) {
  if (!m.allFinite()) throw_numeric(fmt::format("non-finite activation in encoder layer {} ({})", layer, where));
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size < special::kCount + 1) throw_config(fmt::format("vocab_size must be at least 6, got {}", vocab_size));
  if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0) {
    throw_config(fmt::format("hidden_dim {} must be a positive multiple of num_heads {}", hidden_dim, num_heads));
  }
  if (ffn_dim == 0) throw_config("ffn_dim must be positive");
  if (max_len < relation_tokens + 4) {
    throw_config(fmt::format("max_len {} must be at least relation_tokens + 4 = {}", max_len, relation_tokens + 4));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw_config("dropout_rate must lie in [0, 1)");
}

template <typename T>
TensorId ParameterStore<T>::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) throw_config(fmt::format("tensor '{}' declared twice", name));
  Tensor<T> t;
  t.name = std::move(name);
  t.value = Matrix<T>::Zero(rows, cols);
  t.grad = Matrix<T>::Zero(rows, cols);
  tensors_.push_back(std::move(t));
  return TensorId{tensors_.size() - 1};
}

template <typename T>
std::optional<TensorId> ParameterStore<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return TensorId{i};
  }
  return std::nullopt;
}

template <typename T>
TensorId ParameterStore<T>::require(std::string_view name) const {
  const auto id = find(name);
  if (!id) throw_data(fmt::format("parameter tensor '{}' is missing", name));
  return *id;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& t : tensors_) t.grad.setZero(t.value.rows(), t.value.cols());
}

template <typename T>
void ParameterStore<T>::set_trainable(bool trainable) {
  for (auto& t : tensors_) t.trainable = trainable;
}

template <typename T>
void ParameterStore<T>::check_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) throw_numeric(fmt::format("tensor '{}' holds non-finite values", t.name));
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;

template <typename T>
Matrix<T> linear_forward(const ParameterStore<T>& params, const LinearIds& ids, const Matrix<T>& x) {
  return (x * params.value(ids.weight)).rowwise() + params.value(ids.bias).row(0);
}

template <typename T>
Matrix<T> linear_backward(ParameterStore<T>& params, const LinearIds& ids, const Matrix<T>& x,
                          const Matrix<T>& grad_out) {
  params.grad(ids.weight).noalias() += x.transpose() * grad_out;
  params.grad(ids.bias).row(0) += grad_out.colwise().sum();
  return grad_out * params.value(ids.weight).transpose();
}

template <typename T>
Matrix<T> mlp_forward(const ParameterStore<T>& params, const MlpIds& ids, const Matrix<T>& x, MlpTrace<T>* trace) {
  Matrix<T> pre = linear_forward(params, ids.hidden, x);
  Matrix<T> act = pre.unaryExpr([](T v) { return gelu(v); });
  Matrix<T> out = linear_forward(params, ids.output, act);
  if (trace) {
    trace->input = x;
    trace->pre_activation = std::move(pre);
    trace->activation = std::move(act);
  }
  return out;
}

template <typename T>
Matrix<T> mlp_backward(ParameterStore<T>& params, const MlpIds& ids, const MlpTrace<T>& trace,
                       const Matrix<T>& grad_out) {
  const Matrix<T> grad_act = linear_backward(params, ids.output, trace.activation, grad_out);
  const Matrix<T> grad_pre =
      grad_act.cwiseProduct(trace.pre_activation.unaryExpr([](T v) { return gelu_derivative(v); }));
  return linear_backward(params, ids.hidden, trace.input, grad_pre);
}

template Matrix<float> linear_forward(const ParameterStore<float>&, const LinearIds&, const Matrix<float>&);
template Matrix<double> linear_forward(const ParameterStore<double>&, const LinearIds&, const Matrix<double>&);
template Matrix<float> linear_backward(ParameterStore<float>&, const LinearIds&, const Matrix<float>&,
                                       const Matrix<float>&);
template Matrix<double> linear_backward(ParameterStore<double>&, const LinearIds&, const Matrix<double>&,
                                        const Matrix<double>&);
template Matrix<float> mlp_forward(const ParameterStore<float>&, const MlpIds&, const Matrix<float>&,
                                   MlpTrace<float>*);
template Matrix<double> mlp_forward(const ParameterStore<double>&, const MlpIds&, const Matrix<double>&,
                                    MlpTrace<double>*);
template Matrix<float> mlp_backward(ParameterStore<float>&, const MlpIds&, const MlpTrace<float>&,
                                    const Matrix<float>&);
template Matrix<double> mlp_backward(ParameterStore<double>&, const MlpIds&, const MlpTrace<double>&,
                                     const Matrix<double>&);

LinearIds declare_linear(ParameterStore<float>& params, const std::string& name, std::size_t in, std::size_t out) {
  const auto weight = params.add(name + ".weight", static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  const auto bias = params.add(name + ".bias", 1, static_cast<Eigen::Index>(out));
  return {weight, bias};
}

MlpIds declare_mlp(ParameterStore<float>& params, const std::string& name, std::size_t in, std::size_t hidden,
                   std::size_t out) {
  return {declare_linear(params, name + ".dense", in, hidden), declare_linear(params, name + ".out", hidden, out)};
}

LinearIds bind_linear(const ParameterStore<float>& params, const std::string& name) {
  return {params.require(name + ".weight"), params.require(name + ".bias")};
}

MlpIds bind_mlp(const ParameterStore<float>& params, const std::string& name) {
  return {bind_linear(params, name + ".dense"), bind_linear(params, name + ".out")};
}

void init_tensor(Tensor<float>& tensor, std::uint64_t seed) {
  const std::string_view name = tensor.name;
  if (ends_with(name, ".bias")) {
    tensor.value.setZero();
  } else if (ends_with(name, ".gain")) {
    tensor.value.setOnes();
  } else {
    Rng rng = Rng(seed).fork(name_key(name));
    for (Eigen::Index i = 0; i < tensor.value.size(); ++i) {
      tensor.value.data()[i] = static_cast<float>(rng.truncated_normal(kInitStddev));
    }
  }
  tensor.grad.setZero(tensor.value.rows(), tensor.value.cols());
}

ParameterStore<float> declare_parameters(const EncoderConfig& config) {
  config.validate();
  const auto V = static_cast<Eigen::Index>(config.vocab_size);
  const auto k = static_cast<Eigen::Index>(config.hidden_dim);
  const auto m = static_cast<Eigen::Index>(config.relation_tokens);
  ParameterStore<float> p;
  p.add("embeddings.word", V, k);
  p.add("embeddings.position", static_cast<Eigen::Index>(config.max_len), k);
  for (std::size_t kind = 0; kind < kRelationKinds; ++kind) {
    p.add(fmt::format("relation.{}", relation_tag(static_cast<RelationKind>(kind))), m, k);
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto prefix = fmt::format("encoder.{}", l);
    for (const char* proj : {"query", "key", "value", "attn_out"}) {
      declare_linear(p, fmt::format("{}.{}", prefix, proj), config.hidden_dim, config.hidden_dim);
    }
    p.add(prefix + ".ln1.gain", 1, k);
    p.add(prefix + ".ln1.bias", 1, k);
    declare_linear(p, prefix + ".ffn_in", config.hidden_dim, config.ffn_dim);
    declare_linear(p, prefix + ".ffn_out", config.ffn_dim, config.hidden_dim);
    p.add(prefix + ".ln2.gain", 1, k);
    p.add(prefix + ".ln2.bias", 1, k);
  }
  if (!config.tie_mlm_weights) p.add("mlm.weight", V, k);
  p.add("mlm.bias", 1, V);
  declare_mlp(p, "class_head", config.hidden_dim, config.hidden_dim, 1);
  declare_mlp(p, "adapt_head", config.hidden_dim, config.hidden_dim, 2);
  return p;
}

template <typename T>
ModelLayout bind_layout(const ParameterStore<T>& params, const EncoderConfig& config) {
  config.validate();
  const auto V = static_cast<Eigen::Index>(config.vocab_size);
  const auto k = static_cast<Eigen::Index>(config.hidden_dim);
  const auto ffn = static_cast<Eigen::Index>(config.ffn_dim);
  const auto m = static_cast<Eigen::Index>(config.relation_tokens);
  auto require = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    const auto id = params.require(name);
    const auto& v = params[id].value;
    if (v.rows() != rows || v.cols() != cols) {
      throw_data(fmt::format("tensor '{}' has shape {}x{}, config expects {}x{}", name, v.rows(), v.cols(), rows,
                             cols));
    }
    return id;
  };
  auto linear = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
    return LinearIds{require(name + ".weight", in, out), require(name + ".bias", 1, out)};
  };
  auto mlp = [&](const std::string& name, Eigen::Index in, Eigen::Index hidden, Eigen::Index out) {
    return MlpIds{linear(name + ".dense", in, hidden), linear(name + ".out", hidden, out)};
  };
  ModelLayout layout;
  layout.word = require("embeddings.word", V, k);
  layout.position = require("embeddings.position", static_cast<Eigen::Index>(config.max_len), k);
  for (std::size_t kind = 0; kind < kRelationKinds; ++kind) {
    layout.relation[kind] = require(fmt::format("relation.{}", relation_tag(static_cast<RelationKind>(kind))), m, k);
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto prefix = fmt::format("encoder.{}", l);
    LayerIds ids;
    ids.query = linear(prefix + ".query", k, k);
    ids.key = linear(prefix + ".key", k, k);
    ids.value = linear(prefix + ".value", k, k);
    ids.attn_out = linear(prefix + ".attn_out", k, k);
    ids.ln1_gain = require(prefix + ".ln1.gain", 1, k);
    ids.ln1_bias = require(prefix + ".ln1.bias", 1, k);
    ids.ffn_in = linear(prefix + ".ffn_in", k, ffn);
    ids.ffn_out = linear(prefix + ".ffn_out", ffn, k);
    ids.ln2_gain = require(prefix + ".ln2.gain", 1, k);
    ids.ln2_bias = require(prefix + ".ln2.bias", 1, k);
    layout.layers.push_back(ids);
  }
  if (!config.tie_mlm_weights) layout.mlm_weight = require("mlm.weight", V, k);
  layout.mlm_bias = require("mlm.bias", 1, V);
  layout.class_head = mlp("class_head", k, k, 1);
  layout.adapt_head = mlp("adapt_head", k, k, 2);
  return layout;
}

template ModelLayout bind_layout(const ParameterStore<float>&, const EncoderConfig&);
template ModelLayout bind_layout(const ParameterStore<double>&, const EncoderConfig&);

Model<float> init_parameters(const EncoderConfig& config, std::uint64_t seed) {
  auto params = declare_parameters(config);
  for (auto& t : params.tensors()) init_tensor(t, seed);
  return Model<float>(config, std::move(params));
}

template <typename T>
Model<T>::Model(const EncoderConfig& config)
    : Model(config, declare_parameters(config).template cast<T>()) {}

template <typename T>
Model<T>::Model(const EncoderConfig& config, ParameterStore<T> params)
    : config_(config), params_(std::move(params)), layout_(bind_layout(params_, config_)) {}

template <typename T>
Matrix<T> Model<T>::embed(const PromptSequence& prompt, const Matrix<T>* qi_override, std::size_t length) const {
  if (prompt.size() > config_.max_len) {
    throw_data(fmt::format("prompt of length {} exceeds max_len {}", prompt.size(), config_.max_len));
  }
  const std::size_t n = length == 0 ? prompt.size() : std::min(length, prompt.size());
  const auto& word = params_.value(layout_.word);
  const auto& position = params_.value(layout_.position);
  Matrix<T> out(static_cast<Eigen::Index>(n), word.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = prompt.elements[i];
    const auto row = static_cast<Eigen::Index>(i);
    if (e.type == PromptElement::Type::Relation) {
      const bool use_override = qi_override != nullptr && e.relation == RelationKind::QueryIntent;
      const auto& source = use_override ? *qi_override : bank(e.relation);
      if (e.slot >= source.rows()) throw_data(fmt::format("relation slot {} exceeds bank size", e.slot));
      out.row(row) = source.row(e.slot) + position.row(row);
    } else {
      if (e.token < 0 || e.token >= word.rows()) throw_data(fmt::format("token id {} outside vocabulary", e.token));
      out.row(row) = word.row(e.token) + position.row(row);
    }
  }
  return out;
}

template <typename T>
void Model<T>::embed_backward(const PromptSequence& prompt, const Matrix<T>& grad, Matrix<T>* qi_override_grad) {
  auto& word = params_.grad(layout_.word);
  auto& position = params_.grad(layout_.position);
  for (Eigen::Index row = 0; row < grad.rows(); ++row) {
    const auto& e = prompt.elements[static_cast<std::size_t>(row)];
    position.row(row) += grad.row(row);
    if (e.type == PromptElement::Type::Relation) {
      if (qi_override_grad != nullptr && e.relation == RelationKind::QueryIntent) {
        qi_override_grad->row(e.slot) += grad.row(row);
      } else {
        params_.grad(layout_.relation[static_cast<int>(e.relation)]).row(e.slot) += grad.row(row);
      }
    } else {
      word.row(e.token) += grad.row(row);
    }
  }
}

template <typename T>
Matrix<T> Model<T>::layer_forward(const LayerIds& ids, const Matrix<T>& x, const std::vector<bool>& pad_mask,
                                  LayerTrace<T>* trace, Rng* dropout) const {
  const auto n = x.rows();
  const auto k = x.cols();
  const auto heads = static_cast<Eigen::Index>(config_.num_heads);
  const auto d = k / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool use_dropout = dropout != nullptr && config_.dropout_rate > 0.0;

  Matrix<T> q = linear_forward(params_, ids.query, x);
  Matrix<T> kk = linear_forward(params_, ids.key, x);
  Matrix<T> v = linear_forward(params_, ids.value, x);
  Matrix<T> context(n, k);
  std::vector<Matrix<T>> probs;
  probs.reserve(static_cast<std::size_t>(heads));
  for (Eigen::Index h = 0; h < heads; ++h) {
    Matrix<T> scores = (q.middleCols(h * d, d) * kk.middleCols(h * d, d).transpose()) * scale;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (pad_mask[static_cast<std::size_t>(j)]) scores.col(j).setConstant(-std::numeric_limits<T>::infinity());
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      const T max_value = scores.row(r).maxCoeff();
      if (!std::isfinite(max_value)) {
        scores.row(r).setZero();  // every key is PAD; row carries no information
        continue;
      }
      scores.row(r) = (scores.row(r).array() - max_value).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    context.middleCols(h * d, d).noalias() = scores * v.middleCols(h * d, d);
    probs.push_back(std::move(scores));
  }
  Matrix<T> attn = linear_forward(params_, ids.attn_out, context);
  Matrix<T> attn_mask;
  if (use_dropout) {
    attn_mask = dropout_mask<T>(n, k, config_.dropout_rate, *dropout);
    attn = attn.cwiseProduct(attn_mask);
  }
  LayerNormTrace<T> ln1;
  Matrix<T> hidden1 = layer_norm_forward<T>(x + attn, params_.value(ids.ln1_gain), params_.value(ids.ln1_bias),
                                            trace ? &ln1 : nullptr);
  Matrix<T> ffn_pre = linear_forward(params_, ids.ffn_in, hidden1);
  Matrix<T> ffn_act = ffn_pre.unaryExpr([](T val) { return gelu(val); });
  Matrix<T> ffn = linear_forward(params_, ids.ffn_out, ffn_act);
  Matrix<T> ffn_mask;
  if (use_dropout) {
    ffn_mask = dropout_mask<T>(n, k, config_.dropout_rate, *dropout);
    ffn = ffn.cwiseProduct(ffn_mask);
  }
  LayerNormTrace<T> ln2;
  Matrix<T> out = layer_norm_forward<T>(hidden1 + ffn, params_.value(ids.ln2_gain), params_.value(ids.ln2_bias),
                                        trace ? &ln2 : nullptr);
  if (trace) {
    trace->input = x;
    trace->q = std::move(q);
    trace->k = std::move(kk);
    trace->v = std::move(v);
    trace->probs = std::move(probs);
    trace->context = std::move(context);
    trace->attn_dropout = std::move(attn_mask);
    trace->ln1 = std::move(ln1);
    trace->hidden1 = std::move(hidden1);
    trace->ffn_pre = std::move(ffn_pre);
    trace->ffn_act = std::move(ffn_act);
    trace->ffn_dropout = std::move(ffn_mask);
    trace->ln2 = std::move(ln2);
  }
  return out;
}

template <typename T>
Matrix<T> Model<T>::layer_backward(const LayerIds& ids, const LayerTrace<T>& trace, const std::vector<bool>& pad_mask,
                                   const Matrix<T>& grad_out) {
  (void)pad_mask;  // masked keys carry zero probability, hence zero gradient
  const auto n = trace.input.rows();
  const auto k = trace.input.cols();
  const auto heads = static_cast<Eigen::Index>(config_.num_heads);
  const auto d = k / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));

  const Matrix<T> grad_res2 = layer_norm_backward(trace.ln2, params_.value(ids.ln2_gain), params_.grad(ids.ln2_gain),
                                                  params_.grad(ids.ln2_bias), grad_out);
  Matrix<T> grad_ffn = grad_res2;
  if (trace.ffn_dropout.size() != 0) grad_ffn = grad_ffn.cwiseProduct(trace.ffn_dropout);
  const Matrix<T> grad_act = linear_backward(params_, ids.ffn_out, trace.ffn_act, grad_ffn);
  const Matrix<T> grad_pre =
      grad_act.cwiseProduct(trace.ffn_pre.unaryExpr([](T val) { return gelu_derivative(val); }));
  Matrix<T> grad_hidden1 = grad_res2 + linear_backward(params_, ids.ffn_in, trace.hidden1, grad_pre);

  const Matrix<T> grad_res1 = layer_norm_backward(trace.ln1, params_.value(ids.ln1_gain), params_.grad(ids.ln1_gain),
                                                  params_.grad(ids.ln1_bias), grad_hidden1);
  Matrix<T> grad_attn = grad_res1;
  if (trace.attn_dropout.size() != 0) grad_attn = grad_attn.cwiseProduct(trace.attn_dropout);
  const Matrix<T> grad_context = linear_backward(params_, ids.attn_out, trace.context, grad_attn);

  Matrix<T> grad_q(n, k);
  Matrix<T> grad_k(n, k);
  Matrix<T> grad_v(n, k);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const auto& p = trace.probs[static_cast<std::size_t>(h)];
    const auto gc = grad_context.middleCols(h * d, d);
    Matrix<T> grad_p = gc * trace.v.middleCols(h * d, d).transpose();
    grad_v.middleCols(h * d, d).noalias() = p.transpose() * gc;
    const auto row_dot = (grad_p.cwiseProduct(p)).rowwise().sum().eval();
    Matrix<T> grad_scores = p.cwiseProduct(grad_p.colwise() - row_dot) * scale;
    grad_q.middleCols(h * d, d).noalias() = grad_scores * trace.k.middleCols(h * d, d);
    grad_k.middleCols(h * d, d).noalias() = grad_scores.transpose() * trace.q.middleCols(h * d, d);
  }
  Matrix<T> grad_x = grad_res1;
  grad_x += linear_backward(params_, ids.query, trace.input, grad_q);
  grad_x += linear_backward(params_, ids.key, trace.input, grad_k);
  grad_x += linear_backward(params_, ids.value, trace.input, grad_v);
  return grad_x;
}

template <typename T>
Matrix<T> Model<T>::encode(const Matrix<T>& embeddings, const std::vector<bool>& pad_mask, EncoderTrace<T>* trace,
                           Rng* dropout) const {
  if (pad_mask.size() != static_cast<std::size_t>(embeddings.rows())) {
    throw_data("pad mask length does not match the embedding rows");
  }
  if (trace) {
    trace->layers.assign(layout_.layers.size(), LayerTrace<T>{});
    trace->pad_mask = pad_mask;
  }
  Matrix<T> hidden = embeddings;
  for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
    hidden = layer_forward(layout_.layers[l], hidden, pad_mask, trace ? &trace->layers[l] : nullptr, dropout);
    require_finite(hidden, l, "forward");
  }
  return hidden;
}

template <typename T>
Matrix<T> Model<T>::encode_backward(const EncoderTrace<T>& trace, const Matrix<T>& grad_hidden) {
  Matrix<T> grad = grad_hidden;
  for (std::size_t l = layout_.layers.size(); l-- > 0;) {
    grad = layer_backward(layout_.layers[l], trace.layers[l], trace.pad_mask, grad);
    require_finite(grad, l, "backward");
  }
  return grad;
}

template <typename T>
RowVector<T> Model<T>::encode_pooled(const PromptSequence& prompt, const Matrix<T>* qi_override) const {
  const std::size_t n = prompt.content_length();
  const Matrix<T> emb = embed(prompt, qi_override, n);
  return pool(encode(emb, std::vector<bool>(n, false)));
}

template <typename T>
Matrix<T> Model<T>::mlm_logits(const Matrix<T>& hidden, std::span<const std::size_t> positions) const {
  const auto& weight = layout_.mlm_weight ? params_.value(*layout_.mlm_weight) : params_.value(layout_.word);
  Matrix<T> selected(static_cast<Eigen::Index>(positions.size()), hidden.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    selected.row(static_cast<Eigen::Index>(i)) = hidden.row(static_cast<Eigen::Index>(positions[i]));
  }
  Matrix<T> logits = selected * weight.transpose();
  logits.rowwise() += params_.value(layout_.mlm_bias).row(0);
  return logits;
}

template <typename T>
Matrix<T> Model<T>::mlm_backward(const Matrix<T>& hidden, std::span<const std::size_t> positions,
                                 const Matrix<T>& grad_logits) {
  const TensorId weight_id = layout_.mlm_weight ? *layout_.mlm_weight : layout_.word;
  Matrix<T> selected(static_cast<Eigen::Index>(positions.size()), hidden.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    selected.row(static_cast<Eigen::Index>(i)) = hidden.row(static_cast<Eigen::Index>(positions[i]));
  }
  params_.grad(weight_id).noalias() += grad_logits.transpose() * selected;
  params_.grad(layout_.mlm_bias).row(0) += grad_logits.colwise().sum();
  const Matrix<T> grad_selected = grad_logits * params_.value(weight_id);
  Matrix<T> grad_hidden = Matrix<T>::Zero(hidden.rows(), hidden.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    grad_hidden.row(static_cast<Eigen::Index>(positions[i])) += grad_selected.row(static_cast<Eigen::Index>(i));
  }
  return grad_hidden;
}

template <typename T>
T Model<T>::class_logit(const RowVector<T>& pooled, MlpTrace<T>* trace) const {
  const Matrix<T> input = pooled;
  return mlp_forward(params_, layout_.class_head, input, trace)(0, 0);
}

template <typename T>
RowVector<T> Model<T>::class_logit_backward(const MlpTrace<T>& trace, T grad_logit) {
  Matrix<T> grad(1, 1);
  grad(0, 0) = grad_logit;
  return mlp_backward(params_, layout_.class_head, trace, grad).row(0);
}

template <typename T>
AttentionWeights<T> Model<T>::adapt_weights(const RowVector<T>& pooled, MlpTrace<T>* trace) const {
  const Matrix<T> input = pooled;
  const Matrix<T> logits = mlp_forward(params_, layout_.adapt_head, input, trace);
  return simplex_weights<T>(logits(0, 0), logits(0, 1));
}

template <typename T>
RowVector<T> Model<T>::adapt_backward(const MlpTrace<T>& trace, const AttentionWeights<T>& weights, T grad_qq,
                                      T grad_qa) {
  const T mean = weights.query_query * grad_qq + weights.query_answer * grad_qa;
  Matrix<T> grad(1, 2);
  grad(0, 0) = weights.query_query * (grad_qq - mean);
  grad(0, 1) = weights.query_answer * (grad_qa - mean);
  return mlp_backward(params_, layout_.adapt_head, trace, grad).row(0);
}

template class Model<float>;
template class Model<double>;

}  // namespace relprompt
