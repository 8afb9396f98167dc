#include "dmd2/losses.hpp"

#include <cmath>

#include "dmd2/diffusion.hpp"
#include "dmd2/errors.hpp"

namespace dmd2 {

namespace {

// x_t = alpha x + sigma eps with the noise as a constant addend.
Tensor noise_tensor(const Tensor& x, const NoiseSchedule& schedule, std::span<const int> t,
                    const Matrix& eps) {
  if (eps.rows() != static_cast<Eigen::Index>(x.dim(0)) ||
      eps.cols() != static_cast<Eigen::Index>(x.dim(1)))
    throw DimensionError("noise: eps shape does not match the batch");
  const auto alphas = alphas_at(schedule, t);
  const auto sigmas = sigmas_at(schedule, t);
  Matrix scaled = eps;
  for (Eigen::Index r = 0; r < scaled.rows(); ++r) scaled.row(r) *= sigmas[r];
  return scale_rows(x, alphas) + Tensor::from_matrix(scaled);
}

Tensor clamped(const Tensor& logit) { return clamp(logit, -kLogitClamp, kLogitClamp); }

}  // namespace

Matrix dmd_direction(const Matrix& mu_real, const Matrix& mu_fake, const NoiseSchedule& schedule,
                     std::span<const int> t, DmdWeighting weighting) {
  if (mu_real.rows() != mu_fake.rows() || mu_real.cols() != mu_fake.cols())
    throw DimensionError("dmd: real and fake denoiser outputs differ in shape");
  if (static_cast<std::size_t>(mu_real.rows()) != t.size())
    throw DimensionError("dmd: one timestep per row required");
  Matrix diff = mu_real - mu_fake;
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    const double a = schedule.alpha(t[r]);
    const double s = schedule.sigma(t[r]);
    if (s == 0.0)
      throw SingularTimestepError("dmd: sigma_t = 0 at t=" + std::to_string(t[r]));
    // s_real - s_fake = alpha (mu_real - mu_fake) / sigma^2
    const double factor = weighting == DmdWeighting::kUniform ? a / (s * s) : 1.0;
    diff.row(r) *= factor;
  }
  if (weighting == DmdWeighting::kNormalized) {
    const double norm = diff.cwiseAbs().mean();
    if (norm > 0.0) diff /= norm;
  }
  return diff;
}

DmdTerm dmd_generator_grad(const Tensor& x_hat, const Denoiser& mu_real, const Denoiser& mu_fake,
                           const NoiseSchedule& schedule, std::span<const int> t,
                           const Matrix& eps, DmdWeighting weighting) {
  if (x_hat.rank() != 2 || static_cast<std::size_t>(x_hat.dim(0)) != t.size())
    throw DimensionError("dmd: x_hat must be [B, D] with one timestep per row");
  const Matrix x = x_hat.to_matrix();
  if (eps.rows() != x.rows() || eps.cols() != x.cols())
    throw DimensionError("dmd: eps shape does not match x_hat");
  for (int ti : t)
    if (schedule.sigma(ti) == 0.0)
      throw SingularTimestepError("dmd: sigma_t = 0 at t=" + std::to_string(ti));
  const auto alphas = alphas_at(schedule, t);
  const auto sigmas = sigmas_at(schedule, t);
  Matrix noisy(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    noisy.row(r) = alphas[r] * x.row(r) + sigmas[r] * eps.row(r);
  DmdTerm term;
  term.noisy = noisy;
  term.direction =
      dmd_direction(mu_real.denoise(noisy, t), mu_fake.denoise(noisy, t), schedule, t, weighting);
  const Tensor dir = Tensor::from_matrix(term.direction * (-1.0 / static_cast<double>(x.rows())));
  term.loss = sum(mul(x_hat, dir));
  return term;
}

Tensor gan_loss_discriminator(const FakeScoreModel& fsm, const Matrix& real_batch,
                              const Matrix& fake_batch, const NoiseSchedule& schedule,
                              std::span<const int> t_real, std::span<const int> t_fake, Rng& rng) {
  if (real_batch.cols() != fake_batch.cols())
    throw DimensionError("gan: real and fake batches differ in width");
  const Tensor real = Tensor::from_matrix(real_batch);
  const Tensor fake = Tensor::from_matrix(fake_batch);
  const Matrix eps_real = rng.normal_matrix(real_batch.rows(), real_batch.cols());
  const Matrix eps_fake = rng.normal_matrix(fake_batch.rows(), fake_batch.cols());
  const Tensor l_real =
      clamped(fsm.forward(noise_tensor(real, schedule, t_real, eps_real), t_real, true).logit);
  const Tensor l_fake =
      clamped(fsm.forward(noise_tensor(fake, schedule, t_fake, eps_fake), t_fake, true).logit);
  return mean(softplus(scale(l_real, -1.0))) + mean(softplus(l_fake));
}

Tensor gan_loss_generator(const FakeScoreModel& fsm, const Tensor& x_hat,
                          const NoiseSchedule& schedule, std::span<const int> t,
                          const Matrix& eps) {
  const Tensor noisy = noise_tensor(x_hat, schedule, t, eps);
  const Tensor logit = clamped(fsm.forward(noisy, t, true, false).logit);
  return mean(softplus(scale(logit, -1.0)));
}

Tensor regression_loss(const Generator& gen, const Matrix& z, const Matrix& y) {
  if (gen.mode() != GeneratorMode::kOneStep)
    throw ContractError("regression: only defined for a one-step generator");
  if (z.rows() != y.rows() || z.cols() != y.cols() || z.cols() != gen.dim())
    throw ContractError("regression: pair batch shape does not match the generator");
  const std::vector<int> t(z.rows(), gen.schedule_steps().front());
  const Tensor out = gen.forward(Tensor::from_matrix(gen.initial_input(z)), t);
  return dsm_loss(out, y);
}

FakeUpdateStats fake_score_dsm_update(FakeScoreModel& fsm, AdamW& optimizer,
                                      const Matrix& fake_batch, const NoiseSchedule& schedule,
                                      TimestepRange range, Rng& rng, double disc_weight,
                                      const Matrix* real_batch,
                                      std::optional<TimestepRange> gan_range) {
  FakeUpdateStats stats;
  optimizer.zero_grad();
  try {
    const auto t = sample_timesteps(rng, range, fake_batch.rows());
    const Matrix eps = rng.normal_matrix(fake_batch.rows(), fake_batch.cols());
    const auto batch = forward_diffuse(schedule, fake_batch, t, eps);
    Tensor loss =
        dsm_loss(fsm.forward(Tensor::from_matrix(batch.xt), batch.t, false).mu, fake_batch);
    stats.dsm_loss = loss.item();
    if (disc_weight > 0.0) {
      if (real_batch == nullptr)
        throw ContractError("fake update: discriminator term needs a real batch");
      const TimestepRange d_range = gan_range.value_or(range);
      const auto t_real = sample_timesteps(rng, d_range, real_batch->rows());
      const auto t_fake = sample_timesteps(rng, d_range, fake_batch.rows());
      const Tensor d_loss =
          gan_loss_discriminator(fsm, *real_batch, fake_batch, schedule, t_real, t_fake, rng);
      stats.gan_d_loss = d_loss.item();
      loss = loss + scale(d_loss, disc_weight);
    }
    backward(loss);
  } catch (const NumericalError& e) {
    optimizer.zero_grad();
    throw PoisonedStateError(std::string("fake update: ") + e.what());
  }
  optimizer.step();
  optimizer.zero_grad();
  return stats;
}

}  // namespace dmd2
