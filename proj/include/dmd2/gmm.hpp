#pragma once

// Ground-truth Gaussian mixtures and the closed-form quantities derived from
// them under the forward process: diffused densities, scores, posterior-mean
// denoisers, Gaussian KL divergences and the finite-difference gradient of the
// time-averaged KL with respect to an affine generator.

#include <span>
#include <vector>

#include "dmd2/denoiser.hpp"
#include "dmd2/random.hpp"
#include "dmd2/schedule.hpp"
#include "dmd2/types.hpp"

namespace dmd2 {

struct GmmSpec {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<SquareMatrix> covariances;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  int components() const { return static_cast<int>(weights.size()); }

  // Weights sum to 1 within 1e-12, every covariance admits a Cholesky factor.
  void validate() const;

  static GmmSpec single(Vector mean, SquareMatrix cov);
  // `modes` isotropic components of std `std_dev` evenly spaced on a circle in 2-D.
  static GmmSpec ring(int modes, double radius, double std_dev);

  Matrix sample(int n, Rng& rng) const;
  Vector mean() const;
  SquareMatrix covariance() const;
  // Largest per-coordinate standard deviation of the mixture.
  double scale() const;
};

// G(z) = A z + b with z ~ N(0, I); its output law is N(b, A A^T).
struct AffineGenerator {
  SquareMatrix A;
  Vector b;

  Matrix apply(const Matrix& z) const;
  GmmSpec distribution() const;
};

// The mixture pushed through q_t: components N(alpha mu_k, alpha^2 Sigma_k + sigma^2 I).
class DiffusedGmm {
 public:
  DiffusedGmm(const GmmSpec& gmm, double alpha, double sigma);

  double log_density(const Vector& x) const;
  // Gradient of the log density; log-sum-exp stabilized.
  Vector score(const Vector& x) const;
  // Component posterior responsibilities at x.
  Vector responsibilities(const Vector& x) const;

 private:
  void component_terms(const Vector& x, Vector& log_terms, std::vector<Vector>* solves) const;

  std::vector<double> log_weights_;
  std::vector<Vector> means_;
  std::vector<Eigen::LLT<SquareMatrix>> chol_;
  std::vector<double> log_norm_;
};

Vector diffused_score(const GmmSpec& gmm, const NoiseSchedule& schedule, const Vector& x, int t);
// Tweedie: E[x0 | xt] = (xt + sigma_t^2 score) / alpha_t. Throws SingularTimestepError when alpha_t = 0.
Vector optimal_denoiser(const GmmSpec& gmm, const NoiseSchedule& schedule, const Vector& xt, int t);

// Batched oracle denoiser; usable anywhere a trained network is.
class GmmDenoiser : public Denoiser {
 public:
  GmmDenoiser(GmmSpec gmm, NoiseSchedule schedule);
  int dim() const override { return gmm_.dim(); }
  Matrix denoise(const Matrix& xt, std::span<const int> t) const override;

 private:
  GmmSpec gmm_;
  NoiseSchedule schedule_;
};

// KL(N(m1, c1) || N(m2, c2)). Throws MatrixError for a non-SPD covariance.
double kl_gaussian(const Vector& m1, const SquareMatrix& c1, const Vector& m2,
                   const SquareMatrix& c2);

// Exact KL(p_fake,t || p_real,t) for an affine generator and a single-component target.
double kl_gaussian_diffused(const AffineGenerator& gen, const GmmSpec& gmm,
                            const NoiseSchedule& schedule, int t);

// Per-timestep factor applied to the real-minus-fake score difference.
enum class DmdWeighting {
  kUniform,         // raw score difference
  kSigma2OverAlpha, // sigma_t^2 / alpha_t, i.e. the denoiser difference
  kNormalized,      // sigma_t^2 / alpha_t, divided by its batch mean absolute value
};

const char* weighting_name(DmdWeighting w);
DmdWeighting weighting_from_name(const std::string& name);
double weighting_factor(DmdWeighting w, double alpha, double sigma);

struct AffineGradient {
  SquareMatrix dA;
  Vector db;
};

// Central finite differences of mean_t [ w(t) / alpha_t * KL_t ] with respect to
// every entry of A and b, h = 1e-4 (1 + |param|). The 1/alpha_t factor is the
// chain-rule factor between the score-difference estimator and d KL_t/d theta.
// kNormalized has no fixed objective and is rejected with ContractError.
AffineGradient dmd_gradient_oracle(const AffineGenerator& gen, const GmmSpec& gmm,
                                   const NoiseSchedule& schedule, std::span<const int> t_set,
                                   DmdWeighting weighting = DmdWeighting::kUniform);

}  // namespace dmd2
