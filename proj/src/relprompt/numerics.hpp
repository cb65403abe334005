#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace relprompt {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Numerically stable log-softmax (max subtraction).
template <typename T>
std::vector<T> log_softmax(std::span<const T> values) {
  std::vector<T> out(values.size());
  if (values.empty()) return out;
  T max_value = values[0];
  for (const T v : values) max_value = std::max(max_value, v);
  T sum = 0;
  for (const T v : values) sum += std::exp(v - max_value);
  const T log_norm = max_value + std::log(sum);
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] - log_norm;
  return out;
}

template <typename T>
std::vector<T> softmax(std::span<const T> values) {
  std::vector<T> out(values.size());
  if (values.empty()) return out;
  T max_value = values[0];
  for (const T v : values) max_value = std::max(max_value, v);
  T sum = 0;
  for (std::size_t i = 0; i < values.size(); ++i) sum += out[i] = std::exp(values[i] - max_value);
  for (T& v : out) v /= sum;
  return out;
}

/// Row-wise log-softmax of a matrix.
template <typename T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T max_value = logits.row(r).maxCoeff();
    const T log_norm = max_value + std::log((logits.row(r).array() - max_value).exp().sum());
    out.row(r) = logits.row(r).array() - log_norm;
  }
  return out;
}

/// Exact (erf-based) GELU.
template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(3.14159265358979323846));
  return cdf + x * pdf;
}

struct AdamHyper {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-tensor Adam moments. `step` counts updates applied so far.
template <typename T>
struct AdamState {
  Matrix<T> first_moment;
  Matrix<T> second_moment;
  long step = 0;
};

/// One bias-corrected Adam update of `param` in place.
template <typename T>
void adam_step(Matrix<T>& param, const Matrix<T>& grad, AdamState<T>& state, const AdamHyper& hyper) {
  if (state.first_moment.size() == 0) {
    state.first_moment = Matrix<T>::Zero(param.rows(), param.cols());
    state.second_moment = Matrix<T>::Zero(param.rows(), param.cols());
  }
  ++state.step;
  const T b1 = static_cast<T>(hyper.beta1);
  const T b2 = static_cast<T>(hyper.beta2);
  const T correction1 = T(1) - static_cast<T>(std::pow(hyper.beta1, static_cast<double>(state.step)));
  const T correction2 = T(1) - static_cast<T>(std::pow(hyper.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(hyper.learning_rate);
  const T eps = static_cast<T>(hyper.epsilon);
  state.first_moment = b1 * state.first_moment + (T(1) - b1) * grad;
  state.second_moment = b2 * state.second_moment + (T(1) - b2) * grad.cwiseProduct(grad);
  param.array() -= lr * (state.first_moment.array() / correction1) /
                   ((state.second_moment.array() / correction2).sqrt() + eps);
}

/// Relative error |a - n| / max(|a|, |n|, 1e-8).
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

struct TensorGradCheck {
  std::string name;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<TensorGradCheck> tensors;
  double step = 0.0;
  std::string precision = "float64";

  double worst_error() const;
  const TensorGradCheck* worst_tensor() const;
};

/// A named view on one parameter tensor and its analytic gradient.
struct GradCheckTarget {
  std::string name;
  Matrix<double>* value = nullptr;
  const Matrix<double>* analytic_grad = nullptr;
};

/// Central-difference verification of analytic gradients.
///
/// `loss` recomputes the scalar loss from the current parameter values; the
/// targets' analytic gradients must already be populated. At most
/// `max_per_tensor` scalars per tensor are probed (0 = all), chosen with `seed`.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets,
                           double step, std::uint64_t seed, std::size_t max_per_tensor = 0);

}  // namespace relprompt
