#include "dmd2/gmm.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "dmd2/errors.hpp"

namespace dmd2 {

namespace {

Eigen::LLT<SquareMatrix> cholesky(const SquareMatrix& m, const std::string& what) {
  Eigen::LLT<SquareMatrix> llt(m);
  if (llt.info() != Eigen::Success) throw MatrixError(what + " is not symmetric positive definite");
  return llt;
}

double log_det(const Eigen::LLT<SquareMatrix>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

// ---------------------------------------------------------------- GmmSpec

void GmmSpec::validate() const {
  if (weights.empty()) throw ContractError("gmm: no components");
  if (means.size() != weights.size() || covariances.size() != weights.size())
    throw ContractError("gmm: weights, means and covariances must have equal length");
  const int d = dim();
  if (d < 1) throw ContractError("gmm: dimension must be >= 1");
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] >= 0.0)) throw ContractError("gmm: negative weight at component " + std::to_string(k));
    total += weights[k];
    if (means[k].size() != d || covariances[k].rows() != d || covariances[k].cols() != d)
      throw DimensionError("gmm: component " + std::to_string(k) + " has inconsistent dimension");
    if (!covariances[k].isApprox(covariances[k].transpose(), 1e-12))
      throw MatrixError("gmm: covariance " + std::to_string(k) + " is not symmetric");
    cholesky(covariances[k], "gmm: covariance " + std::to_string(k));
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw ContractError("gmm: weights sum to " + std::to_string(total) + ", expected 1");
}

GmmSpec GmmSpec::single(Vector mean, SquareMatrix cov) {
  GmmSpec g;
  g.weights = {1.0};
  g.means = {std::move(mean)};
  g.covariances = {std::move(cov)};
  g.validate();
  return g;
}

GmmSpec GmmSpec::ring(int modes, double radius, double std_dev) {
  if (modes < 1) throw ContractError("ring gmm: need at least one mode");
  GmmSpec g;
  for (int k = 0; k < modes; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / modes;
    Vector mu(2);
    mu << radius * std::cos(angle), radius * std::sin(angle);
    g.weights.push_back(1.0 / modes);
    g.means.push_back(mu);
    g.covariances.push_back(SquareMatrix::Identity(2, 2) * (std_dev * std_dev));
  }
  // Exact normalization regardless of rounding in 1/modes.
  const double total = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
  g.weights.back() += 1.0 - total;
  g.validate();
  return g;
}

Matrix GmmSpec::sample(int n, Rng& rng) const {
  const int d = dim();
  Matrix out(n, d);
  std::vector<Eigen::MatrixXd> factors;
  for (const auto& c : covariances) factors.push_back(cholesky(c, "gmm covariance").matrixL());
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  for (int i = 0; i < n; ++i) {
    const int k = pick(rng.engine());
    Vector z(d);
    for (int j = 0; j < d; ++j) z[j] = rng.normal();
    out.row(i) = (means[k] + factors[k] * z).transpose();
  }
  return out;
}

Vector GmmSpec::mean() const {
  Vector m = Vector::Zero(dim());
  for (int k = 0; k < components(); ++k) m += weights[k] * means[k];
  return m;
}

SquareMatrix GmmSpec::covariance() const {
  const Vector m = mean();
  SquareMatrix c = SquareMatrix::Zero(dim(), dim());
  for (int k = 0; k < components(); ++k) {
    const Vector dm = means[k] - m;
    c += weights[k] * (covariances[k] + dm * dm.transpose());
  }
  return c;
}

double GmmSpec::scale() const { return std::sqrt(covariance().diagonal().maxCoeff()); }

// ---------------------------------------------------------------- AffineGenerator

Matrix AffineGenerator::apply(const Matrix& z) const {
  Matrix out = z * A.transpose();
  out.rowwise() += b.transpose();
  return out;
}

GmmSpec AffineGenerator::distribution() const { return GmmSpec::single(b, A * A.transpose()); }

// ---------------------------------------------------------------- DiffusedGmm

DiffusedGmm::DiffusedGmm(const GmmSpec& gmm, double alpha, double sigma) {
  const int d = gmm.dim();
  for (int k = 0; k < gmm.components(); ++k) {
    if (gmm.weights[k] <= 0.0) continue;
    SquareMatrix c = alpha * alpha * gmm.covariances[k] +
                     sigma * sigma * SquareMatrix::Identity(d, d);
    auto llt = cholesky(c, "diffused covariance of component " + std::to_string(k));
    log_weights_.push_back(std::log(gmm.weights[k]));
    means_.push_back(alpha * gmm.means[k]);
    log_norm_.push_back(-0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det(llt)));
    chol_.push_back(std::move(llt));
  }
}

void DiffusedGmm::component_terms(const Vector& x, Vector& log_terms,
                                  std::vector<Vector>* solves) const {
  const std::size_t k_count = means_.size();
  log_terms.resize(static_cast<Eigen::Index>(k_count));
  if (solves) solves->resize(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const Vector diff = x - means_[k];
    Vector solved = chol_[k].solve(diff);
    log_terms[k] = log_weights_[k] + log_norm_[k] - 0.5 * diff.dot(solved);
    if (!std::isfinite(log_terms[k]) || !solved.allFinite())
      throw NumericalError("diffused gmm: non-finite term at component " + std::to_string(k));
    if (solves) (*solves)[k] = std::move(solved);
  }
}

double DiffusedGmm::log_density(const Vector& x) const {
  Vector terms;
  component_terms(x, terms, nullptr);
  const double top = terms.maxCoeff();
  return top + std::log((terms.array() - top).exp().sum());
}

Vector DiffusedGmm::responsibilities(const Vector& x) const {
  Vector terms;
  component_terms(x, terms, nullptr);
  Vector r = (terms.array() - terms.maxCoeff()).exp();
  return r / r.sum();
}

Vector DiffusedGmm::score(const Vector& x) const {
  Vector terms;
  std::vector<Vector> solves;
  component_terms(x, terms, &solves);
  Vector r = (terms.array() - terms.maxCoeff()).exp();
  r /= r.sum();
  Vector s = Vector::Zero(x.size());
  for (std::size_t k = 0; k < solves.size(); ++k) s -= r[k] * solves[k];
  return s;
}

Vector diffused_score(const GmmSpec& gmm, const NoiseSchedule& schedule, const Vector& x, int t) {
  return DiffusedGmm(gmm, schedule.alpha(t), schedule.sigma(t)).score(x);
}

Vector optimal_denoiser(const GmmSpec& gmm, const NoiseSchedule& schedule, const Vector& xt,
                        int t) {
  const double a = schedule.alpha(t);
  const double s = schedule.sigma(t);
  if (a == 0.0) throw SingularTimestepError("optimal denoiser: alpha_t = 0 at t=" + std::to_string(t));
  if (s == 0.0) return xt / a;
  return (xt + s * s * DiffusedGmm(gmm, a, s).score(xt)) / a;
}

GmmDenoiser::GmmDenoiser(GmmSpec gmm, NoiseSchedule schedule)
    : gmm_(std::move(gmm)), schedule_(std::move(schedule)) {
  gmm_.validate();
}

Matrix GmmDenoiser::denoise(const Matrix& xt, std::span<const int> t) const {
  if (static_cast<std::size_t>(xt.rows()) != t.size() || xt.cols() != gmm_.dim())
    throw DimensionError("gmm denoiser: input shape does not match timesteps/dim");
  std::map<int, DiffusedGmm> cache;
  Matrix out(xt.rows(), xt.cols());
  for (Eigen::Index i = 0; i < xt.rows(); ++i) {
    const int ti = t[i];
    const double a = schedule_.alpha(ti);
    const double s = schedule_.sigma(ti);
    if (a == 0.0) throw SingularTimestepError("gmm denoiser: alpha_t = 0 at t=" + std::to_string(ti));
    const Vector x = xt.row(i).transpose();
    if (s == 0.0) {
      out.row(i) = (x / a).transpose();
      continue;
    }
    auto it = cache.find(ti);
    if (it == cache.end()) it = cache.emplace(ti, DiffusedGmm(gmm_, a, s)).first;
    out.row(i) = ((x + s * s * it->second.score(x)) / a).transpose();
  }
  return out;
}

// ---------------------------------------------------------------- KL

double kl_gaussian(const Vector& m1, const SquareMatrix& c1, const Vector& m2,
                   const SquareMatrix& c2) {
  const auto l1 = cholesky(c1, "kl: first covariance");
  const auto l2 = cholesky(c2, "kl: second covariance");
  const Vector dm = m2 - m1;
  const double trace = l2.solve(c1).trace();
  const double maha = dm.dot(l2.solve(dm));
  return 0.5 * (trace + maha - static_cast<double>(m1.size()) + log_det(l2) - log_det(l1));
}

double kl_gaussian_diffused(const AffineGenerator& gen, const GmmSpec& gmm,
                            const NoiseSchedule& schedule, int t) {
  if (gmm.components() != 1) throw ContractError("kl_gaussian_diffused: target must have one component");
  const double a = schedule.alpha(t);
  const double s = schedule.sigma(t);
  const auto d = gen.b.size();
  const SquareMatrix noise = s * s * SquareMatrix::Identity(d, d);
  return kl_gaussian(a * gen.b, a * a * gen.A * gen.A.transpose() + noise, a * gmm.means[0],
                     a * a * gmm.covariances[0] + noise);
}

const char* weighting_name(DmdWeighting w) {
  switch (w) {
    case DmdWeighting::kUniform: return "uniform";
    case DmdWeighting::kSigma2OverAlpha: return "sigma2_over_alpha";
    case DmdWeighting::kNormalized: return "normalized";
  }
  return "?";
}

DmdWeighting weighting_from_name(const std::string& name) {
  if (name == "uniform") return DmdWeighting::kUniform;
  if (name == "sigma2_over_alpha") return DmdWeighting::kSigma2OverAlpha;
  if (name == "normalized") return DmdWeighting::kNormalized;
  throw ContractError("unknown dmd weighting '" + name + "'");
}

double weighting_factor(DmdWeighting w, double alpha, double sigma) {
  if (w == DmdWeighting::kUniform) return 1.0;
  if (alpha == 0.0) throw SingularTimestepError("dmd weighting: alpha_t = 0");
  return sigma * sigma / alpha;
}

AffineGradient dmd_gradient_oracle(const AffineGenerator& gen, const GmmSpec& gmm,
                                   const NoiseSchedule& schedule, std::span<const int> t_set,
                                   DmdWeighting weighting) {
  if (weighting == DmdWeighting::kNormalized)
    throw ContractError("dmd_gradient_oracle: the batch-normalized weighting has no fixed objective");
  if (t_set.empty()) throw ContractError("dmd_gradient_oracle: empty timestep set");
  AffineGenerator probe = gen;
  auto objective_of_slot = [&]() {
    const AffineGenerator& g = probe;
    double total = 0.0;
    for (int t : t_set) {
      const double a = schedule.alpha(t);
      if (a == 0.0) throw SingularTimestepError("dmd_gradient_oracle: alpha_t = 0");
      total += weighting_factor(weighting, a, schedule.sigma(t)) / a *
               kl_gaussian_diffused(g, gmm, schedule, t);
    }
    return total / static_cast<double>(t_set.size());
  };
  auto step_for = [](double value) {
    const double h = 1e-4 * (1.0 + std::abs(value));
    if (value + h == value || value - h == value)
      throw NumericalError("dmd_gradient_oracle: finite-difference step underflows");
    return h;
  };
  auto central = [&](double& slot) {
    const double original = slot;
    const double h = step_for(original);
    slot = original + h;
    const double up = objective_of_slot();
    slot = original - h;
    const double down = objective_of_slot();
    slot = original;
    return (up - down) / (2.0 * h);
  };
  AffineGradient grad{SquareMatrix::Zero(gen.A.rows(), gen.A.cols()), Vector::Zero(gen.b.size())};
  for (Eigen::Index i = 0; i < gen.A.rows(); ++i)
    for (Eigen::Index j = 0; j < gen.A.cols(); ++j) grad.dA(i, j) = central(probe.A(i, j));
  for (Eigen::Index i = 0; i < gen.b.size(); ++i) grad.db[i] = central(probe.b[i]);
  return grad;
}

}  // namespace dmd2
