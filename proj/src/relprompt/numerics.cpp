#include "relprompt/numerics.hpp"

#include "relprompt/rng.hpp"

#include <algorithm>
#include <numeric>

namespace relprompt {

double GradCheckReport::worst_error() const {
  double worst = 0.0;
  for (const auto& t : tensors) worst = std::max(worst, t.max_relative_error);
  return worst;
}

const TensorGradCheck* GradCheckReport::worst_tensor() const {
  const TensorGradCheck* worst = nullptr;
  for (const auto& t : tensors) {
    if (worst == nullptr || t.max_relative_error > worst->max_relative_error) worst = &t;
  }
  return worst;
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets,
                           double step, std::uint64_t seed, std::size_t max_per_tensor) {
  GradCheckReport report;
  report.step = step;
  Rng rng(seed);
  for (const auto& target : targets) {
    TensorGradCheck entry;
    entry.name = target.name;
    auto& value = *target.value;
    const auto& analytic = *target.analytic_grad;
    std::vector<Eigen::Index> indices(static_cast<std::size_t>(value.size()));
    std::iota(indices.begin(), indices.end(), Eigen::Index{0});
    if (max_per_tensor != 0 && indices.size() > max_per_tensor) {
      rng.shuffle(std::span(indices));
      indices.resize(max_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    for (const auto index : indices) {
      double& slot = value.data()[index];
      const double saved = slot;
      slot = saved + step;
      const double plus = loss();
      slot = saved - step;
      const double minus = loss();
      slot = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic.data()[index];
      entry.max_relative_error = std::max(entry.max_relative_error, relative_error(a, numeric));
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      ++entry.checked;
    }
    report.tensors.push_back(std::move(entry));
  }
  return report;
}

}  // namespace relprompt
