#include <cmath>

#include "doctest.h"
#include "dmd2/diffusion.hpp"
#include "dmd2/errors.hpp"
#include "dmd2/gmm.hpp"
#include "dmd2/metrics.hpp"
#include "dmd2/pairs.hpp"
#include "dmd2/schedule.hpp"
#include "oracles/oracles.hpp"

using namespace dmd2;

namespace {

GmmSpec two_mode_1d() {
  GmmSpec g;
  g.weights = {0.5, 0.5};
  g.means = {Vector::Constant(1, -2.0), Vector::Constant(1, 2.0)};
  g.covariances = {SquareMatrix::Constant(1, 1, 0.25), SquareMatrix::Constant(1, 1, 0.25)};
  return g;
}

oracle::Mixture to_oracle(const GmmSpec& g) {
  oracle::Mixture m;
  for (int k = 0; k < g.components(); ++k) {
    m.w.push_back(g.weights[k]);
    m.mean.push_back(g.means[k]);
    m.cov.push_back(g.covariances[k]);
  }
  return m;
}

GmmSpec standard_normal(int dim) { return GmmSpec::single(Vector::Zero(dim), SquareMatrix::Identity(dim, dim)); }

TeacherConfig small_teacher(int dim, double scale, int steps) {
  TeacherConfig c;
  c.arch.dim = dim;
  c.arch.hidden = {64, 64, 64};
  c.arch.data_scale = scale;
  c.steps = steps;
  c.batch_size = 256;
  c.seed = 4;
  return c;
}

// sqrt(mean |s_model - s_true|^2) / sqrt(mean |s_true|^2) over probes from the diffused target.
// Probes start at t = 250: below that the implied score amplifies denoiser error by
// alpha_t / sigma_t^2, so it measures conditioning rather than training.
double probe_score_error(const DenoiserModel& model, const GmmSpec& g, const NoiseSchedule& s) {
  Rng rng(77);
  double num = 0.0, den = 0.0;
  for (int t : {250, 400, 550, 700, 850, 950}) {
    const Matrix x0 = g.sample(400, rng);
    const auto batch = forward_diffuse(s, x0, t, rng.normal_matrix(400, g.dim()));
    const std::vector<int> ts(400, t);
    const Matrix score = score_from_denoiser(s, model.denoise(batch.xt, ts), batch.xt, ts);
    for (int r = 0; r < 400; ++r) {
      const Vector truth = diffused_score(g, s, batch.xt.row(r).transpose(), t);
      num += (score.row(r).transpose() - truth).squaredNorm();
      den += truth.squaredNorm();
    }
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_SUITE("diffusion-core") {

TEST_CASE("linear schedule matches the product formula and is variance preserving") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const oracle::Schedule ref;
  CHECK(s.steps() == 1000);
  for (int t = 0; t < 1000; ++t) {
    CHECK(s.alpha(t) == doctest::Approx(ref.alpha[t]).epsilon(1e-12));
    CHECK(s.sigma(t) == doctest::Approx(ref.sigma[t]).epsilon(1e-10));
    CHECK(std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0) < 1e-12);
    if (t > 0) {
      CHECK(s.alpha(t) <= s.alpha(t - 1));
      CHECK(s.sigma(t) >= s.sigma(t - 1));
    }
  }
  CHECK(s.alpha(0) > 0.9999);
  CHECK(s.sigma(999) > 0.9999);
  CHECK_THROWS_AS(s.alpha(1000), IndexError);
  CHECK_THROWS_AS(s.sigma(-1), IndexError);
  CHECK_THROWS_AS(NoiseSchedule::from_tables({0.8, 0.6}, {0.8, 0.8}), ContractError);
  CHECK_THROWS_AS(NoiseSchedule::from_tables({0.6, 0.8}, {0.8, 0.6}), ContractError);
}

TEST_CASE("trained range drops sigma-zero steps and maps fractions") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const TimestepRange r = trained_range(s, 0.02, 0.98);
  CHECK(r.lo == 20);
  CHECK(r.hi == 980);
  const NoiseSchedule flat = NoiseSchedule::from_tables({1.0, 0.8, 0.6}, {0.0, 0.6, 0.8});
  CHECK(trained_range(flat, 0.0, 1.0).lo == 1);
  Rng rng(1);
  for (int v : sample_timesteps(rng, r, 1000)) {
    CHECK(v >= 20);
    CHECK(v <= 980);
  }
}

TEST_CASE("forward_diffuse follows its definition") {
  const NoiseSchedule s = NoiseSchedule::from_tables({1.0, 0.8, 0.0}, {0.0, 0.6, 1.0});
  Matrix x0(1, 2), eps(1, 2);
  x0 << 1.0, 0.0;
  eps << 0.0, 1.0;
  CHECK(forward_diffuse(s, x0, 0, eps).xt == x0);
  CHECK(forward_diffuse(s, x0, 2, eps).xt == eps);
  const Matrix xt = forward_diffuse(s, x0, 1, eps).xt;
  CHECK(xt(0, 0) == doctest::Approx(0.8));
  CHECK(xt(0, 1) == doctest::Approx(0.6));
  CHECK_THROWS_AS(forward_diffuse(s, x0, 1, Matrix::Zero(2, 2)), DimensionError);
}

TEST_CASE("score_from_denoiser: zero case and standard-normal target") {
  const NoiseSchedule s = NoiseSchedule::linear();
  Rng rng(2);
  const Matrix xt = rng.normal_matrix(50, 2);
  const std::vector<int> t(50, 300);
  const Matrix zero = score_from_denoiser(s, xt / s.alpha(300), xt, t);
  CHECK(zero.cwiseAbs().maxCoeff() < 1e-12);

  // N(0, I) diffuses to N(0, I); its posterior mean is alpha_t x_t by quadrature.
  const oracle::Mixture normal{{1.0}, {Vector::Zero(1)}, {SquareMatrix::Identity(1, 1)}};
  for (int tt : {30, 400, 900}) {
    const double a = s.alpha(tt), sg = s.sigma(tt);
    for (double y : {-2.0, -0.3, 0.7, 1.9}) {
      Matrix x(1, 1), mu(1, 1);
      x << y;
      mu << oracle::posterior_mean_1d(normal, a, sg, y);
      const std::vector<int> tv{tt};
      CHECK(score_from_denoiser(s, mu, x, tv)(0, 0) == doctest::Approx(-y).epsilon(1e-9));
    }
  }
}

TEST_CASE("dsm_loss: exact prediction is zero, constant offset gives |c|^2") {
  Rng rng(3);
  const Matrix x0 = rng.normal_matrix(10, 2);
  CHECK(dsm_loss(Tensor::from_matrix(x0), x0).item() == 0.0);
  Matrix shifted = x0;
  shifted.col(0).array() += 0.3;
  shifted.col(1).array() -= 0.4;
  CHECK(dsm_loss(Tensor::from_matrix(shifted), x0).item() == doctest::Approx(0.25));
}

TEST_CASE("sampler timesteps stride the range from hi to lo") {
  const auto steps = sampler_timesteps({20, 980}, 5);
  CHECK(steps == std::vector<int>{980, 740, 500, 260, 20});
  CHECK(sampler_timesteps({20, 980}, 1) == std::vector<int>{980});
  CHECK_THROWS_AS(sampler_timesteps({20, 980}, 0), ContractError);
  CHECK_THROWS_AS(sampler_timesteps({5, 6}, 3), ContractError);
}

TEST_CASE("ODE sampler with exact denoiser on N(0, I) recovers N(0, I)") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const GmmSpec g = standard_normal(2);
  const GmmDenoiser exact(g, s);
  Rng rng(4);
  const Matrix z = rng.normal_matrix(10000, 2);
  const Matrix out = sample_ode(exact, s, z, 50, trained_range(s, 0.02, 0.98));
  CHECK(frechet_distance(SampleStats::from_samples(out), SampleStats::from_gmm(g)) < 0.05);
  CHECK(sample_ode(exact, s, z, 50, trained_range(s, 0.02, 0.98)) == out);
}

TEST_CASE("one ODE step from noise is the posterior mean") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const GmmSpec g = GmmSpec::ring(4, 2.0, 0.3);
  const GmmDenoiser exact(g, s);
  Rng rng(5);
  const Matrix z = rng.normal_matrix(20, 2);
  const Matrix out = sample_ode(exact, s, z, 1, {20, 980});
  for (int r = 0; r < 20; ++r) {
    const Vector pm = optimal_denoiser(g, s, z.row(r).transpose(), 980);
    const double e = (out.row(r).transpose() - pm).norm();
    CHECK(e < 1e-12);
  }
  // Near pure noise the posterior mean is close to the mixture-weighted mode average.
  CHECK(out.cwiseAbs().maxCoeff() < 0.5);
}

// Full-resolution chain: with strided steps the ancestral update is first-order and
// shrinks the variance (about 14% at 50 steps).
TEST_CASE("SDE sampler preserves N(0, I) moments and degenerates to ODE stepping") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const GmmSpec g = standard_normal(2);
  const GmmDenoiser exact(g, s);
  Rng rng(6), chain(7);
  const Matrix z = rng.normal_matrix(100000, 2);
  const TimestepRange full = trained_range(s, 0.02, 0.98);
  const Matrix out = sample_sde(exact, s, z, full.hi - full.lo + 1, full, chain);
  const SampleStats st = SampleStats::from_samples(out);
  CHECK(std::abs(st.mean(0)) < 0.02);
  CHECK(std::abs(st.mean(1)) < 0.02);
  CHECK(st.covariance(0, 0) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(st.covariance(1, 1) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::abs(st.covariance(0, 1)) < 0.02);

  const NoiseSchedule clean = NoiseSchedule::from_tables(std::vector<double>(10, 1.0), std::vector<double>(10, 0.0));
  const GmmDenoiser exact_clean(g, clean);
  Rng c2(8);
  const Matrix small = z.topRows(100);
  CHECK(sample_sde(exact_clean, clean, small, 5, {0, 9}, c2) == sample_ode(exact_clean, clean, small, 5, {0, 9}));
}

TEST_CASE("teacher: zero steps keep the initialization, fixed seed is reproducible") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const GmmSpec g = GmmSpec::ring(8, 4.0, 0.3);
  TeacherConfig c = small_teacher(2, g.scale(), 0);
  const TeacherResult r0 = train_teacher(c, g, s);
  Rng init(mix_seed(c.seed, 0));
  const DenoiserModel fresh(c.arch, s, init);
  CHECK(checkpoint_hash(r0.model.to_checkpoint(0)) == checkpoint_hash(fresh.to_checkpoint(0)));

  c.steps = 30;
  const auto h1 = checkpoint_hash(train_teacher(c, g, s).model.to_checkpoint(0));
  const auto h2 = checkpoint_hash(train_teacher(c, g, s).model.to_checkpoint(0));
  CHECK(h1 == h2);
  CHECK(h1 != checkpoint_hash(r0.model.to_checkpoint(0)));
  c.arch.dim = 3;
  CHECK_THROWS_AS(train_teacher(c, g, s), DimensionError);
}

TEST_CASE("teacher on a single Gaussian: probe score error within 5% and decreasing") {
  const NoiseSchedule s = NoiseSchedule::linear();
  SquareMatrix cov(2, 2);
  cov << 1.5, 0.4, 0.4, 0.6;
  Vector mean(2);
  mean << 1.0, -0.5;
  const GmmSpec g = GmmSpec::single(mean, cov);
  const TeacherConfig c = small_teacher(2, g.scale(), 3000);
  std::vector<double> errors;
  const std::vector<int> marks{10, 30, 100, 300, 1000, 3000};
  train_teacher(c, g, s, [&](int step, const DenoiserModel& m) {
    if (std::find(marks.begin(), marks.end(), step) != marks.end()) errors.push_back(probe_score_error(m, g, s));
  });
  REQUIRE(errors.size() == marks.size());
  int violations = 0;
  for (std::size_t i = 1; i < errors.size(); ++i) violations += errors[i] > errors[i - 1];
  CHECK(violations <= 1);
  CHECK(errors.back() < 0.05);
}

TEST_CASE("teacher on a 2-mode 1-D mixture approaches the irreducible DSM floor") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const GmmSpec g = two_mode_1d();
  const TeacherConfig c = small_teacher(1, g.scale(), 4000);
  const DenoiserModel model = train_teacher(c, g, s).model;
  const oracle::Mixture m = to_oracle(g);
  const oracle::Hermite gh(40);

  double floor = 0.0, achieved = 0.0;
  Rng rng(9);
  const std::vector<int> grid{30, 100, 200, 350, 500, 650, 800, 950};
  for (int t : grid) {
    const double a = s.alpha(t), sg = s.sigma(t);
    // E || x0 - E[x0 | x_t] ||^2 by quadrature over x0 (per component) and eps.
    double f = 0.0;
    for (std::size_t k = 0; k < m.w.size(); ++k) {
      const double mu = m.mean[k](0), sd = std::sqrt(m.cov[k](0, 0));
      f += m.w[k] * gh.expect([&](double u) {
        const double x0 = mu + sd * u;
        return gh.expect([&](double e) {
          const double d = x0 - oracle::posterior_mean_1d(m, a, sg, a * x0 + sg * e, 40);
          return d * d;
        });
      });
    }
    floor += f / grid.size();
    const Matrix x0 = g.sample(20000, rng);
    const auto batch = forward_diffuse(s, x0, t, rng.normal_matrix(20000, 1));
    achieved += dsm_loss(Tensor::from_matrix(model.denoise(batch.xt, batch.t)), x0).item() / grid.size();
  }
  CHECK(achieved >= floor * 0.97);
  CHECK(achieved <= floor * 1.10);
}

TEST_CASE("ODE sampler is bit-deterministic") {
  const NoiseSchedule s = NoiseSchedule::linear();
  Rng rng(10);
  const DenoiserModel m(DenoiserArch{.dim = 2, .hidden = {16, 16}}, s, rng);
  const Matrix z = rng.normal_matrix(64, 2);
  CHECK(sample_ode(m, s, z, 20, {20, 980}) == sample_ode(m, s, z, 20, {20, 980}));
  CHECK_THROWS_AS(sample_ode(m, s, Matrix::Zero(3, 3), 20, {20, 980}), DimensionError);
}

TEST_CASE("pairs: empty, byte-identical, thread-independent, consistent with the ODE marginal") {
  const NoiseSchedule s = NoiseSchedule::linear();
  const GmmSpec g = two_mode_1d();
  const GmmDenoiser teacher(g, s);
  PairOptions po;
  po.count = 0;
  po.seed = 5;
  po.range = trained_range(s, 0.02, 0.98);
  const PairDataset empty = generate_pairs(teacher, s, po);
  CHECK(empty.count() == 0);
  CHECK(decode_pairs(encode_pairs(empty), "empty").count() == 0);

  po.count = 10000;
  po.ode_steps = 25;
  const auto bytes = encode_pairs(generate_pairs(teacher, s, po));
  CHECK(encode_pairs(generate_pairs(teacher, s, po)) == bytes);
  po.threads = 3;
  const PairDataset threaded = generate_pairs(teacher, s, po);
  CHECK(encode_pairs(threaded) == bytes);

  Rng rng(11);
  const Matrix reference = sample_ode(teacher, s, rng.normal_matrix(10000, 1), 25, po.range);
  CHECK(frechet_distance(SampleStats::from_samples(threaded.y), SampleStats::from_samples(reference)) < 0.05);
  po.seed = 6;
  CHECK(encode_pairs(generate_pairs(teacher, s, po)) != bytes);
}

}  // TEST_SUITE
