#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dmd2/errors.hpp"
#include "dmd2/mlp.hpp"
#include "dmd2/optimizer.hpp"
#include "dmd2/random.hpp"
#include "dmd2/tensor.hpp"
#include "oracles/oracles.hpp"

using namespace dmd2;

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Plain loops, no library code: out = silu(...silu(x W0 + b0)...) W_L + b_L.
Matrix reference_forward(const MlpModel& m, const Matrix& x, const Matrix& emb) {
  Matrix h(x.rows(), x.cols() + emb.cols());
  h << x, emb;
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const auto w = m.weight(l).values();
    const auto b = m.bias(l).values();
    const std::size_t in = m.widths()[l], out = m.widths()[l + 1];
    Matrix next(h.rows(), out);
    for (Eigen::Index r = 0; r < h.rows(); ++r)
      for (std::size_t j = 0; j < out; ++j) {
        double s = b[j];
        for (std::size_t i = 0; i < in; ++i) s += h(r, i) * w[i * out + j];
        if (l + 1 < m.layer_count()) s = s / (1.0 + std::exp(-s));
        next(r, j) = s;
      }
    h = next;
  }
  return h;
}

}  // namespace

TEST_SUITE("compute-core") {

TEST_CASE("tensor construction checks element counts") {
  CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1, 2, 3}), DimensionError);
  const Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS_AS(t.at(2, 0), IndexError);
  CHECK_THROWS_AS(t.item(), ContractError);
  CHECK(shape_numel({4, 5}) == 20);
}

TEST_CASE("sum gradient is ones, dot gradient is 2x") {
  Tensor x = Tensor::from_data({1, 4}, {0.5, -1.0, 2.0, 3.0}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = Tensor::from_data({1, 3}, {0.5, -1.0, 2.0}, true);
  backward(sum(y * y));
  const auto g = y.grad();
  CHECK(g[0] == 1.0);
  CHECK(g[1] == -2.0);
  CHECK(g[2] == 4.0);
}

TEST_CASE("grad has the shape of data and accumulates across backward calls") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  backward(sum(x));
  backward(sum(scale(x, 2.0)));
  CHECK(x.grad().size() == x.numel());
  for (double g : x.grad()) CHECK(g == 3.0);
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar and constant losses") {
  Tensor x = Tensor::from_data({1, 2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(x), ContractError);
  CHECK_THROWS_AS(backward(sum(Tensor::from_data({1, 2}, {1, 2}))), ContractError);
}

TEST_CASE("ops producing non-finite values raise") {
  const Tensor big = Tensor::from_data({1, 1}, {1e308});
  CHECK_THROWS_AS(scale(big, 10.0), NumericalError);
  CHECK_THROWS_AS(Tensor::from_data({1, 1}, {std::nan("")}) * Tensor::from_data({1, 1}, {1.0}),
                  NumericalError);
}

TEST_CASE("shape mismatches raise dimension errors") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(concat_cols(a, Tensor::zeros({3, 1})), DimensionError);
  CHECK_THROWS_AS(add_bias(a, Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(clamp(a, 1.0, 0.0), ContractError);
}

TEST_CASE("each op's gradient matches central differences") {
  Rng rng(11);
  const Matrix a0 = rng.normal_matrix(3, 4);
  const Matrix b0 = rng.normal_matrix(4, 2);
  const Matrix c0 = rng.normal_matrix(3, 2);
  const Matrix bias0 = rng.normal_matrix(1, 2);
  const std::vector<double> rows{0.3, -1.2, 2.0};

  // loss(a) for fixed b, c; every primitive appears once.
  auto build = [&](const Tensor& a) {
    Tensor h = add_bias(matmul(a, Tensor::from_matrix(b0)), Tensor::from_data({2}, {bias0(0, 0), bias0(0, 1)}));
    h = silu(h) + softplus(scale(h, -0.7)) + clamp(h, -0.5, 0.5);
    h = scale_rows(h, rows) * Tensor::from_matrix(c0) - square(h);
    h = concat_cols(h, h);
    return mean(h) + sum(h) * 0.1;
  };
  Tensor a = Tensor::from_matrix(a0, true);
  backward(build(a));
  const auto want = oracle::fd_gradient(
      [&](const std::vector<double>& v) {
        return build(Tensor::from_data({3, 4}, v)).item();
      },
      to_vec(a.values()), 1e-6);
  const auto got = a.grad();
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
}

TEST_CASE("detach cuts the graph") {
  Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
  Tensor y = x * x;
  Tensor loss = sum(y.detach() * x);
  backward(loss);
  const auto g = x.grad();
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 4.0);
  CHECK(y.detach().is_leaf());
  CHECK_FALSE(y.detach().requires_grad());
}

TEST_CASE("mlp: zero weights give zero output, identity layer is identity") {
  MlpModel zero({3, 5, 2});
  const Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor e = Tensor::from_data({2, 1}, {0.5, 0.25});
  const Tensor zero_out = zero.forward(x, e).out;
  for (double v : zero_out.values()) CHECK(v == 0.0);

  MlpModel id({2, 2});
  id.weight(0).mutable_values()[0] = 1.0;
  id.weight(0).mutable_values()[3] = 1.0;
  const Tensor out = id.forward(x, Tensor::zeros({2, 0})).out;
  CHECK(to_vec(out.values()) == to_vec(x.values()));
}

TEST_CASE("mlp: forward matches an independent loop implementation") {
  Rng rng(3);
  const MlpModel m = MlpModel::init({5, 16, 16, 3}, rng);
  const Matrix x = rng.normal_matrix(7, 3), emb = rng.normal_matrix(7, 2);
  const Matrix want = reference_forward(m, x, emb);
  const Matrix got = m.forward(Tensor::from_matrix(x), Tensor::from_matrix(emb)).out.to_matrix();
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m.evaluate(x, emb) - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mlp: parameter count is a function of widths") {
  CHECK(MlpModel::parameter_count({4, 8, 2}) == 4 * 8 + 8 + 8 * 2 + 2);
  Rng rng(1);
  CHECK(MlpModel::init({4, 8, 2}, rng).parameter_count() == 58);
  CHECK_THROWS_AS(MlpModel({4}), ContractError);
  CHECK_THROWS_AS(MlpModel({4, 0, 1}), ContractError);
}

TEST_CASE("mlp: 3-layer scalar loss gradients match finite differences at h=1e-4") {
  Rng rng(5);
  MlpModel m = MlpModel::init({4, 8, 8, 8, 1}, rng);
  const Matrix x = rng.normal_matrix(6, 3), emb = rng.normal_matrix(6, 1);
  auto loss_of = [&](const MlpModel& model) {
    return mean(square(model.forward(Tensor::from_matrix(x), Tensor::from_matrix(emb)).out));
  };
  backward(loss_of(m));
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const auto want = oracle::fd_gradient(
        [&](const std::vector<double>& v) {
          MlpModel probe = m;
          std::copy(v.begin(), v.end(), probe.weight(l).mutable_values().begin());
          return loss_of(probe).item();
        },
        to_vec(m.weight(l).values()), 1e-4);
    const auto got = m.weight(l).grad();
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(oracle::rel_err(got[i], want[i], 1e-6) < 1e-4);
  }
}

TEST_CASE("mlp: copies are deep") {
  Rng rng(2);
  MlpModel a = MlpModel::init({2, 3, 1}, rng);
  MlpModel b = a;
  b.weight(0).mutable_values()[0] += 1.0;
  CHECK(a.weight(0).values()[0] != b.weight(0).values()[0]);
  a.copy_values_from(b);
  CHECK(a.weight(0).values()[0] == b.weight(0).values()[0]);
  CHECK_THROWS_AS(a.copy_values_from(MlpModel({2, 4, 1})), DimensionError);
}

TEST_CASE("adamw: zero grad without decay leaves params, decay shrinks by (1 - lr wd)") {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  AdamW plain({{"p", p}}, {0.1, 0.9, 0.999, 1e-8, 0.0});
  backward(sum(p) * 0.0 + sum(p * Tensor::zeros({3})));
  plain.step();
  CHECK(to_vec(p.values()) == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(plain.step_count() == 1);

  Tensor q = Tensor::from_data({2}, {1.0, -4.0}, true);
  AdamW decay({{"q", q}}, {0.1, 0.9, 0.999, 1e-8, 0.5});
  for (int s = 0; s < 3; ++s) {
    backward(sum(q * Tensor::zeros({2})));
    decay.step();
    decay.zero_grad();
  }
  CHECK(q.values()[0] == doctest::Approx(std::pow(0.95, 3)).epsilon(1e-14));
  CHECK(q.values()[1] == doctest::Approx(-4.0 * std::pow(0.95, 3)).epsilon(1e-14));
  CHECK(decay.step_count() == 3);
}

TEST_CASE("adamw: matches an element-wise reference over a random trajectory") {
  Rng rng(9);
  std::vector<double> init(6);
  for (double& v : init) v = rng.normal();
  Tensor p = Tensor::from_data({2, 3}, init, true);
  AdamW opt({{"p", p}}, {3e-3, 0.8, 0.95, 1e-8, 0.01});
  oracle::AdamRef ref{3e-3, 0.8, 0.95, 1e-8, 0.01, {}, {}, 0};
  std::vector<double> ref_p = init;
  for (int s = 0; s < 25; ++s) {
    const Matrix target = rng.normal_matrix(2, 3);
    backward(sum(square(p - Tensor::from_matrix(target))));
    const std::vector<double> g = to_vec(p.grad());
    opt.step();
    opt.zero_grad();
    ref.step(ref_p, g);
    CHECK(opt.step_count() == static_cast<std::uint64_t>(s + 1));
  }
  for (int i = 0; i < 6; ++i) CHECK(p.values()[i] == doctest::Approx(ref_p[i]).epsilon(1e-12));
  CHECK(opt.first_moment(0).size() == p.numel());
  CHECK(opt.second_moment(0).size() == p.numel());
}

TEST_CASE("adamw: constant gradient gives steps approaching lr in magnitude") {
  Tensor p = Tensor::from_data({2}, {0.0, 0.0}, true);
  AdamW opt({{"p", p}}, {1e-2, 0.9, 0.999, 1e-8, 0.0});
  std::vector<double> prev{0.0, 0.0};
  double last_step = 0.0;
  for (int s = 0; s < 2000; ++s) {
    backward(sum(p * Tensor::from_data({2}, {3.0, -0.02})));
    opt.step();
    opt.zero_grad();
    last_step = std::abs(p.values()[0] - prev[0]);
    CHECK(p.values()[0] < prev[0]);
    CHECK(p.values()[1] > prev[1]);
    prev = to_vec(p.values());
  }
  CHECK(last_step == doctest::Approx(1e-2).epsilon(1e-3));
}

TEST_CASE("adamw: per-prefix learning-rate scale and non-finite gradients") {
  Tensor a = Tensor::from_data({1}, {0.0}, true);
  Tensor b = Tensor::from_data({1}, {0.0}, true);
  AdamW opt({{"body.w", a}, {"head.w", b}}, {1e-3, 0.9, 0.999, 1e-8, 0.0});
  opt.set_lr_scale("head.", 10.0);
  CHECK(opt.lr_scale(0) == 1.0);
  CHECK(opt.lr_scale(1) == 10.0);
  backward(sum(a) + sum(b));
  opt.step();
  CHECK(b.values()[0] == doctest::Approx(10.0 * a.values()[0]).epsilon(1e-12));
  CHECK_THROWS_AS(opt.set_lr_scale("head.", 0.0), ContractError);

  const Tensor c = scale(a, 2.0);
  CHECK_THROWS_AS(AdamW({{"c", c}}, {}), ContractError);
}

TEST_CASE("identical seeds give bit-identical parameter trajectories") {
  auto run = [] {
    Rng rng(42);
    MlpModel m = MlpModel::init({3, 8, 1}, rng);
    AdamW opt(m.parameters("m."), {1e-2, 0.9, 0.999, 1e-8, 0.01});
    for (int s = 0; s < 20; ++s) {
      const Matrix x = rng.normal_matrix(16, 2), e = rng.normal_matrix(16, 1);
      backward(mean(square(m.forward(Tensor::from_matrix(x), Tensor::from_matrix(e)).out)));
      opt.step();
      opt.zero_grad();
    }
    std::vector<double> all;
    for (const auto& p : m.parameters()) all.insert(all.end(), p.tensor.values().begin(), p.tensor.values().end());
    return all;
  };
  CHECK(run() == run());
}

}  // TEST_SUITE
