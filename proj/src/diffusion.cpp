#include "dmd2/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "dmd2/errors.hpp"

namespace dmd2 {

DiffusedBatch forward_diffuse(const NoiseSchedule& schedule, const Matrix& x0, int t,
                              const Matrix& eps) {
  return forward_diffuse(schedule, x0, std::vector<int>(x0.rows(), t), eps);
}

DiffusedBatch forward_diffuse(const NoiseSchedule& schedule, const Matrix& x0,
                              std::vector<int> t, const Matrix& eps) {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
    throw DimensionError("forward_diffuse: eps shape does not match x0");
  if (t.size() != static_cast<std::size_t>(x0.rows()))
    throw DimensionError("forward_diffuse: one timestep per row required");
  DiffusedBatch batch{x0, std::move(t), eps, Matrix(x0.rows(), x0.cols())};
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const int ti = batch.t[i];
    batch.xt.row(i) = schedule.alpha(ti) * x0.row(i) + schedule.sigma(ti) * eps.row(i);
  }
  return batch;
}

std::vector<double> alphas_at(const NoiseSchedule& schedule, std::span<const int> t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = schedule.alpha(t[i]);
  return out;
}

std::vector<double> sigmas_at(const NoiseSchedule& schedule, std::span<const int> t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = schedule.sigma(t[i]);
  return out;
}

Matrix score_from_denoiser(const NoiseSchedule& schedule, const Matrix& mu, const Matrix& xt,
                           std::span<const int> t) {
  if (mu.rows() != xt.rows() || mu.cols() != xt.cols() ||
      t.size() != static_cast<std::size_t>(xt.rows()))
    throw DimensionError("score_from_denoiser: mismatched shapes");
  Matrix score(xt.rows(), xt.cols());
  for (Eigen::Index i = 0; i < xt.rows(); ++i) {
    const double a = schedule.alpha(t[i]);
    const double s = schedule.sigma(t[i]);
    if (s == 0.0)
      throw SingularTimestepError("score_from_denoiser: sigma_t = 0 at t=" + std::to_string(t[i]));
    score.row(i) = -(xt.row(i) - a * mu.row(i)) / (s * s);
  }
  return score;
}

Tensor dsm_loss(const Tensor& mu, const Matrix& x0) {
  if (mu.rank() != 2 || mu.dim(0) != static_cast<std::size_t>(x0.rows()) ||
      mu.dim(1) != static_cast<std::size_t>(x0.cols()))
    throw DimensionError("dsm_loss: prediction " + shape_str(mu.shape()) +
                         " does not match targets");
  const Tensor err = sub(mu, Tensor::from_matrix(x0));
  return scale(sum(square(err)), 1.0 / static_cast<double>(x0.rows()));
}

Tensor dsm_loss(const DenoiserModel& model, const DiffusedBatch& batch) {
  return dsm_loss(model.forward(Tensor::from_matrix(batch.xt), batch.t).mu, batch.x0);
}

std::vector<int> sample_timesteps(Rng& rng, TimestepRange range, std::size_t count) {
  std::vector<int> t(count);
  for (auto& ti : t) ti = rng.uniform_int(range.lo, range.hi);
  return t;
}

TeacherResult train_teacher(const TeacherConfig& config, const GmmSpec& target,
                            const NoiseSchedule& schedule, const StepCallback& on_step) {
  if (config.steps < 0 || config.batch_size < 1)
    throw ContractError("train_teacher: steps must be >= 0 and batch_size >= 1");
  if (config.arch.dim != target.dim())
    throw DimensionError("train_teacher: architecture dim does not match target");
  Rng init_rng(mix_seed(config.seed, 0));
  Rng data_rng(mix_seed(config.seed, 1));
  TeacherResult result{DenoiserModel(config.arch, schedule, init_rng), {}};
  AdamW opt(result.model.parameters(), {.lr = config.lr, .weight_decay = config.weight_decay});
  const TimestepRange range = trained_range(schedule, config.t_lo_frac, config.t_hi_frac);

  double window_loss = 0.0;
  int window = 0;
  for (int step = 0; step < config.steps; ++step) {
    if (config.cosine_decay)
      opt.set_lr(config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / config.steps)));
    const Matrix x0 = target.sample(config.batch_size, data_rng);
    const Matrix eps = data_rng.normal_matrix(config.batch_size, target.dim());
    auto t = sample_timesteps(data_rng, range, config.batch_size);
    const DiffusedBatch batch = forward_diffuse(schedule, x0, std::move(t), eps);
    try {
      const Tensor loss = dsm_loss(result.model, batch);
      opt.zero_grad();
      backward(loss);
      opt.step();
      window_loss += loss.item();
    } catch (const NumericalError& e) {
      throw PoisonedStateError("train_teacher: diverged at step " + std::to_string(step) + ": " +
                               e.what());
    }
    ++window;
    if (config.log_every > 0 && (step + 1) % config.log_every == 0) {
      result.log.push_back({step + 1, window_loss / window});
      window_loss = 0.0;
      window = 0;
    }
    if (on_step) on_step(step + 1, result.model);
  }
  return result;
}

std::vector<int> sampler_timesteps(TimestepRange range, int n_steps) {
  if (n_steps < 1) throw ContractError("sampler: n_steps must be >= 1");
  if (n_steps > range.hi - range.lo + 1)
    throw ContractError("sampler: " + std::to_string(n_steps) + " steps exceed the " +
                        std::to_string(range.hi - range.lo + 1) + " available timesteps");
  std::vector<int> steps(n_steps);
  if (n_steps == 1) {
    steps[0] = range.hi;
    return steps;
  }
  const double stride = static_cast<double>(range.hi - range.lo) / (n_steps - 1);
  for (int k = 0; k < n_steps; ++k)
    steps[k] = static_cast<int>(std::lround(range.hi - k * stride));
  return steps;
}

namespace {

Matrix sample_chain(const Denoiser& model, const NoiseSchedule& schedule, const Matrix& z,
                    int n_steps, TimestepRange range, Rng* rng) {
  if (z.cols() != model.dim()) throw DimensionError("sampler: z width does not match the model");
  const auto steps = sampler_timesteps(range, n_steps);
  Matrix x = z;
  std::vector<int> t_rows(z.rows());
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const int t = steps[k];
    std::fill(t_rows.begin(), t_rows.end(), t);
    Matrix x0_hat = model.denoise(x, t_rows);
    if (k + 1 == steps.size()) return x0_hat;
    const double a_t = schedule.alpha(t), s_t = schedule.sigma(t);
    const int next = steps[k + 1];
    const double a_s = schedule.alpha(next), s_s = schedule.sigma(next);
    Matrix eps_hat = Matrix::Zero(x.rows(), x.cols());
    if (s_t > 0.0) eps_hat = (x - a_t * x0_hat) / s_t;
    double noise = 0.0;
    if (rng && s_t > 0.0 && a_s > 0.0) {
      const double ratio = (a_t / a_s) * (a_t / a_s);
      noise = std::sqrt(std::max(0.0, (s_s * s_s) / (s_t * s_t) * (1.0 - ratio)));
    }
    const double keep = std::sqrt(std::max(0.0, s_s * s_s - noise * noise));
    x = a_s * x0_hat + keep * eps_hat;
    if (noise > 0.0) x += noise * rng->normal_matrix(x.rows(), x.cols());
  }
  return x;
}

}  // namespace

Matrix sample_ode(const Denoiser& model, const NoiseSchedule& schedule, const Matrix& z,
                  int n_steps, TimestepRange range) {
  return sample_chain(model, schedule, z, n_steps, range, nullptr);
}

Matrix sample_sde(const Denoiser& model, const NoiseSchedule& schedule, const Matrix& z,
                  int n_steps, TimestepRange range, Rng& rng) {
  return sample_chain(model, schedule, z, n_steps, range, &rng);
}

}  // namespace dmd2
