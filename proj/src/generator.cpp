#include "dmd2/generator.hpp"

#include <algorithm>

#include "dmd2/errors.hpp"

namespace dmd2 {

Generator::Generator(DenoiserModel backbone, std::vector<int> steps, GeneratorMode mode)
    : backbone_(std::move(backbone)), steps_(std::move(steps)), mode_(mode) {
  if (steps_.empty()) throw ContractError("generator: empty timestep schedule");
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    backbone_.schedule().check_timestep(steps_[i]);
    if (i > 0 && steps_[i] >= steps_[i - 1])
      throw ContractError("generator: schedule must be strictly decreasing");
  }
}

Generator Generator::one_step(DenoiserModel backbone) {
  const int last = backbone.schedule().steps() - 1;
  return Generator(std::move(backbone), {last}, GeneratorMode::kOneStep);
}

Generator Generator::multi_step(DenoiserModel backbone, std::vector<int> schedule_steps) {
  return Generator(std::move(backbone), std::move(schedule_steps), GeneratorMode::kMultiStep);
}

Matrix Generator::initial_input(const Matrix& z) const {
  if (z.cols() != dim()) throw DimensionError("generator: z width does not match the model");
  return backbone_.schedule().sigma(steps_.front()) * z;
}

Tensor Generator::forward(const Tensor& x, std::span<const int> t, bool track_params) const {
  return backbone_.forward(x, t, false, track_params).mu;
}

Matrix Generator::sample_onestep(const Matrix& z) const {
  if (mode_ != GeneratorMode::kOneStep)
    throw ContractError("generator: sample_onestep called on a multi-step generator");
  const std::vector<int> t(z.rows(), steps_.front());
  return backbone_.denoise(initial_input(z), t);
}

Matrix Generator::sample_multistep(const Matrix& z, Rng& rng) const {
  if (mode_ != GeneratorMode::kMultiStep)
    throw ContractError("generator: sample_multistep called on a one-step generator");
  const auto& sched = backbone_.schedule();
  Matrix x = initial_input(z);
  std::vector<int> t(z.rows());
  Matrix x_hat;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    std::fill(t.begin(), t.end(), steps_[i]);
    x_hat = backbone_.denoise(x, t);
    if (i + 1 < steps_.size()) {
      const int next = steps_[i + 1];
      x = sched.alpha(next) * x_hat + sched.sigma(next) * rng.normal_matrix(z.rows(), z.cols());
    }
  }
  return x_hat;
}

Matrix Generator::sample(const Matrix& z, Rng& rng) const {
  return mode_ == GeneratorMode::kOneStep ? sample_onestep(z) : sample_multistep(z, rng);
}

Matrix Generator::backward_simulate(const Matrix& z, int step_index, Rng& rng) const {
  const std::vector<int> idx(z.rows(), step_index);
  return backward_simulate(z, idx, rng);
}

Matrix Generator::backward_simulate(const Matrix& z, std::span<const int> step_index,
                                    Rng& rng) const {
  if (step_index.size() != static_cast<std::size_t>(z.rows()))
    throw DimensionError("backward_simulate: one step index per row required");
  int deepest = 1;
  for (int i : step_index) {
    if (i < 1 || i > num_steps())
      throw IndexError("backward_simulate: step index " + std::to_string(i) + " outside [1, " +
                       std::to_string(num_steps()) + "]");
    deepest = std::max(deepest, i);
  }
  const auto& sched = backbone_.schedule();
  Matrix x = initial_input(z);
  Matrix out = x;
  std::vector<int> t(z.rows());
  for (int i = 1; i < deepest; ++i) {
    std::fill(t.begin(), t.end(), steps_[i - 1]);
    const Matrix x_hat = backbone_.denoise(x, t);
    const int next = steps_[i];
    x = sched.alpha(next) * x_hat + sched.sigma(next) * rng.normal_matrix(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      if (step_index[r] == i + 1) out.row(r) = x.row(r);
  }
  return out;
}

}  // namespace dmd2
