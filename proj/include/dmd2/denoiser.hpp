#pragma once

#include <span>
#include <vector>

#include "dmd2/checkpoint.hpp"
#include "dmd2/mlp.hpp"
#include "dmd2/schedule.hpp"
#include "dmd2/types.hpp"

namespace dmd2 {

// Anything that maps noisy rows x_t (with per-row timesteps) to an estimate of
// E[x_0 | x_t]. Implemented by the neural denoiser and by the analytic oracle.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual int dim() const = 0;
  virtual Matrix denoise(const Matrix& xt, std::span<const int> t) const = 0;
};

// Sinusoidal features of u = t/T: [sin(w_k u), cos(w_k u)] with w_k = (pi/2) 2^k.
Matrix time_embedding(std::span<const int> t, int total_steps, int frequencies);

struct DenoiserArch {
  int dim = 2;
  std::vector<std::size_t> hidden{128, 128, 128};
  int time_frequencies = 6;
  // Per-coordinate scale of the clean data; sets input normalization and output scale.
  double data_scale = 1.0;

  std::vector<std::size_t> widths() const;
  int embed_dim() const { return 2 * time_frequencies; }
  // Hidden layer whose activation feeds the discriminator head.
  int middle_layer() const { return (static_cast<int>(hidden.size()) - 1) / 2; }
  bool operator==(const DenoiserArch&) const = default;
};

nlohmann::json arch_to_json(const DenoiserArch& arch);
DenoiserArch arch_from_json(const nlohmann::json& j);

// mu(x_t, t) = s * f(x_t / sqrt(alpha_t^2 s^2 + sigma_t^2), emb(t)), s = data_scale.
class DenoiserModel : public Denoiser {
 public:
  DenoiserModel(DenoiserArch arch, NoiseSchedule schedule);  // zero weights
  DenoiserModel(DenoiserArch arch, NoiseSchedule schedule, Rng& rng);

  struct Output {
    Tensor mu;
    Tensor tap;
  };
  Output forward(const Tensor& xt, std::span<const int> t, bool with_tap = false,
                 bool track_params = true) const;

  int dim() const override { return arch_.dim; }
  Matrix denoise(const Matrix& xt, std::span<const int> t) const override;
  Matrix denoise(const Matrix& xt, std::span<const int> t, Matrix* tap) const;

  const DenoiserArch& arch() const { return arch_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  MlpModel& mlp() { return mlp_; }
  const MlpModel& mlp() const { return mlp_; }
  std::vector<NamedParameter> parameters(const std::string& prefix = "") const {
    return mlp_.parameters(prefix);
  }
  void copy_values_from(const DenoiserModel& other) { mlp_.copy_values_from(other.mlp_); }

  Checkpoint to_checkpoint(std::uint64_t config_hash) const;
  static DenoiserModel from_checkpoint(const Checkpoint& ckpt, NoiseSchedule schedule);

 private:
  std::vector<double> input_scales(std::span<const int> t) const;

  DenoiserArch arch_;
  NoiseSchedule schedule_;
  MlpModel mlp_;
};

}  // namespace dmd2
