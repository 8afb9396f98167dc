#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dmd2/denoiser.hpp"
#include "dmd2/gmm.hpp"
#include "dmd2/optimizer.hpp"
#include "dmd2/schedule.hpp"

namespace dmd2 {

struct DiffusedBatch {
  Matrix x0;
  std::vector<int> t;
  Matrix eps;
  Matrix xt;  // alpha_t x0 + sigma_t eps, row-wise
};

DiffusedBatch forward_diffuse(const NoiseSchedule& schedule, const Matrix& x0, int t,
                              const Matrix& eps);
DiffusedBatch forward_diffuse(const NoiseSchedule& schedule, const Matrix& x0,
                              std::vector<int> t, const Matrix& eps);

// Row-wise alpha_t / sigma_t lookups.
std::vector<double> alphas_at(const NoiseSchedule& schedule, std::span<const int> t);
std::vector<double> sigmas_at(const NoiseSchedule& schedule, std::span<const int> t);

// -(xt - alpha_t mu) / sigma_t^2. Throws SingularTimestepError when sigma_t = 0.
Matrix score_from_denoiser(const NoiseSchedule& schedule, const Matrix& mu, const Matrix& xt,
                           std::span<const int> t);

// Mean over rows of |mu - x0|^2.
Tensor dsm_loss(const Tensor& mu, const Matrix& x0);
Tensor dsm_loss(const DenoiserModel& model, const DiffusedBatch& batch);

std::vector<int> sample_timesteps(Rng& rng, TimestepRange range, std::size_t count);

struct TeacherConfig {
  DenoiserArch arch;
  int steps = 4000;
  int batch_size = 256;
  double lr = 2e-3;
  double weight_decay = 0.0;
  bool cosine_decay = true;
  double t_lo_frac = 0.02;
  double t_hi_frac = 0.98;
  std::uint64_t seed = 0;
  int log_every = 100;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
};

struct TeacherResult {
  DenoiserModel model;
  std::vector<TrainLogEntry> log;
};

using StepCallback = std::function<void(int step, const DenoiserModel& model)>;

// Denoising score matching on samples of `target`. Optional callback fires after each step.
TeacherResult train_teacher(const TeacherConfig& config, const GmmSpec& target,
                            const NoiseSchedule& schedule, const StepCallback& on_step = {});

// n_steps timesteps evenly strided from range.hi down to range.lo.
std::vector<int> sampler_timesteps(TimestepRange range, int n_steps);

// Deterministic x0-prediction stepping (zero stochasticity). Returns the final
// denoised estimate. z is used directly as the initial state.
Matrix sample_ode(const Denoiser& model, const NoiseSchedule& schedule, const Matrix& z,
                  int n_steps, TimestepRange range);

// Ancestral stepping: same update with the maximal (DDPM posterior) noise level.
Matrix sample_sde(const Denoiser& model, const NoiseSchedule& schedule, const Matrix& z,
                  int n_steps, TimestepRange range, Rng& rng);

}  // namespace dmd2
