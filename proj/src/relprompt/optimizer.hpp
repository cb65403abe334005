#pragma once

#include "relprompt/model.hpp"
#include "relprompt/numerics.hpp"

#include <vector>

namespace relprompt {

/// Adam over every trainable tensor of a parameter store. Moments are kept
/// per tensor index, so the store layout must not change between steps
/// (tensors appended later get fresh moments).
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamHyper hyper) : hyper_(hyper) {}

  void step(ParameterStore<float>& params) {
    if (states_.size() < params.tensors().size()) states_.resize(params.tensors().size());
    for (std::size_t i = 0; i < params.tensors().size(); ++i) {
      auto& t = params.tensors()[i];
      if (!t.trainable) continue;
      adam_step(t.value, t.grad, states_[i], hyper_);
    }
  }

  const AdamHyper& hyper() const { return hyper_; }
  void set_learning_rate(double lr) { hyper_.learning_rate = lr; }
  std::vector<AdamState<float>>& states() { return states_; }
  const std::vector<AdamState<float>>& states() const { return states_; }

 private:
  AdamHyper hyper_;
  std::vector<AdamState<float>> states_;
};

}  // namespace relprompt
