#pragma once

#include <span>
#include <vector>

#include "dmd2/denoiser.hpp"
#include "dmd2/random.hpp"

namespace dmd2 {

enum class GeneratorMode { kOneStep, kMultiStep };

// Student G_theta. It reuses the denoiser architecture: x_hat = backbone(x_t, t).
// The first input is sigma_{t_1} z; for i > 1 the input is
// x_{t_i} = alpha_{t_i} x_hat_{t_{i-1}} + sigma_{t_i} eps with fresh eps.
class Generator {
 public:
  // One-step student conditioned on t_1 = T - 1.
  static Generator one_step(DenoiserModel backbone);
  // Strictly decreasing timesteps in [0, T); N = 1 is allowed.
  static Generator multi_step(DenoiserModel backbone, std::vector<int> schedule_steps);

  GeneratorMode mode() const { return mode_; }
  const std::vector<int>& schedule_steps() const { return steps_; }
  int num_steps() const { return static_cast<int>(steps_.size()); }
  int dim() const { return backbone_.dim(); }

  DenoiserModel& backbone() { return backbone_; }
  const DenoiserModel& backbone() const { return backbone_; }
  std::vector<NamedParameter> parameters() const { return backbone_.parameters("generator."); }

  Matrix initial_input(const Matrix& z) const;

  // Graph-recording single denoising call.
  Tensor forward(const Tensor& x, std::span<const int> t, bool track_params = true) const;

  // Throws ContractError unless mode() == kOneStep.
  Matrix sample_onestep(const Matrix& z) const;
  // Throws ContractError unless mode() == kMultiStep.
  Matrix sample_multistep(const Matrix& z, Rng& rng) const;
  Matrix sample(const Matrix& z, Rng& rng) const;

  // The inference-time input to step i (1-based), produced without a graph.
  Matrix backward_simulate(const Matrix& z, int step_index, Rng& rng) const;
  // Per-row variant: row r is simulated up to step_index[r].
  Matrix backward_simulate(const Matrix& z, std::span<const int> step_index, Rng& rng) const;

 private:
  Generator(DenoiserModel backbone, std::vector<int> steps, GeneratorMode mode);

  DenoiserModel backbone_;
  std::vector<int> steps_;
  GeneratorMode mode_;
};

}  // namespace dmd2
