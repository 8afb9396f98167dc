#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dmd2/denoiser.hpp"
#include "dmd2/fake_score.hpp"
#include "dmd2/generator.hpp"
#include "dmd2/gmm.hpp"
#include "dmd2/optimizer.hpp"
#include "dmd2/pairs.hpp"

namespace dmd2 {

// Logits are clamped to this magnitude before entering log-sigmoid terms.
inline constexpr double kLogitClamp = 15.0;

// Per-row weighted real-minus-fake score difference for noisy inputs built
// from mu_real / mu_fake evaluated at the same x_t. Throws SingularTimestepError
// if any sigma_t is zero.
Matrix dmd_direction(const Matrix& mu_real, const Matrix& mu_fake, const NoiseSchedule& schedule,
                     std::span<const int> t, DmdWeighting weighting);

struct DmdTerm {
  Tensor loss;       // surrogate whose gradient w.r.t. x_hat is -direction / B
  Matrix direction;  // the injected ascent direction, one row per sample
  Matrix noisy;      // x_t = alpha_t x_hat + sigma_t eps
};

// Noises the detached x_hat values, queries both denoisers without graphs and
// attaches the weighted difference to x_hat. Minimizing the returned loss moves
// x_hat along `direction`; neither denoiser receives gradient.
DmdTerm dmd_generator_grad(const Tensor& x_hat, const Denoiser& mu_real, const Denoiser& mu_fake,
                           const NoiseSchedule& schedule, std::span<const int> t,
                           const Matrix& eps, DmdWeighting weighting);

// Minimization form of the discriminator objective:
//   mean softplus(-l(F(x_real))) + mean softplus(l(F(x_fake)))
// i.e. -E log D(real) - E log(1 - D(fake)), with logits clamped to +-kLogitClamp.
// The noise draws are taken from rng, one (t, eps) per row of each batch.
Tensor gan_loss_discriminator(const FakeScoreModel& fsm, const Matrix& real_batch,
                              const Matrix& fake_batch, const NoiseSchedule& schedule,
                              std::span<const int> t_real, std::span<const int> t_fake, Rng& rng);

// Non-saturating generator term -E log D(F(x_hat)). The fake-score parameters
// enter as constants, so only x_hat (and through it theta) receives gradient.
Tensor gan_loss_generator(const FakeScoreModel& fsm, const Tensor& x_hat,
                          const NoiseSchedule& schedule, std::span<const int> t, const Matrix& eps);

// Mean over rows of |G(z) - y|^2 for a one-step generator.
Tensor regression_loss(const Generator& gen, const Matrix& z, const Matrix& y);

struct FakeUpdateStats {
  double dsm_loss = 0.0;
  double gan_d_loss = 0.0;
};

// One optimizer step on mu_fake (and the head when disc_weight > 0) using
// detached generator samples. real_batch is required only when disc_weight > 0.
FakeUpdateStats fake_score_dsm_update(FakeScoreModel& fsm, AdamW& optimizer,
                                      const Matrix& fake_batch, const NoiseSchedule& schedule,
                                      TimestepRange range, Rng& rng, double disc_weight = 0.0,
                                      const Matrix* real_batch = nullptr,
                                      std::optional<TimestepRange> gan_range = std::nullopt);

}  // namespace dmd2
