// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   acceptance [--out DIR] [--keep] [N ...]
//
// With no numbers every criterion runs. --keep reuses a previous output
// directory (teacher and pair artifacts are matched by hash).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dmd2/config.hpp"
#include "dmd2/diffusion.hpp"
#include "dmd2/errors.hpp"
#include "dmd2/gmm.hpp"
#include "dmd2/losses.hpp"
#include "dmd2/metrics.hpp"
#include "dmd2/pairs.hpp"
#include "dmd2/pipeline.hpp"
#include "oracles/oracles.hpp"

using namespace dmd2;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Context {
  fs::path configs;
  fs::path out;
  PipelineOptions options;
  std::optional<AblationReport> onestep;
};

// ---------------------------------------------------------------------------

struct McGradient {
  Matrix dA, db, se_A, se_b;  // db and se_b are column vectors
};

// The distribution-matching estimator with exact scores for an affine
// generator: dmd_generator_grad backpropagated to (A, b) over n draws,
// timesteps stratified over t_set.
McGradient dmd_mc_gradient(const AffineGenerator& gen, const GmmSpec& target, const NoiseSchedule& sched,
                           const std::vector<int>& t_set, int n, Rng& rng) {
  const int dim = static_cast<int>(gen.b.size());
  const GmmDenoiser real(target, sched), fake(gen.distribution(), sched);
  // Antithetic halves: rows n/2.. reuse the first half's (z, eps) negated, with
  // the same timestep. Each half is an unbiased sample of the estimator.
  const int half = n / 2;
  Matrix z(n, dim), eps(n, dim);
  z.topRows(half) = rng.normal_matrix(half, dim);
  eps.topRows(half) = rng.normal_matrix(half, dim);
  z.bottomRows(half) = -z.topRows(half);
  eps.bottomRows(half) = -eps.topRows(half);
  std::vector<int> t(n);
  for (int i = 0; i < n; ++i) t[i] = t_set[(i % half) % t_set.size()];
  const Tensor at = Tensor::from_matrix(gen.A.transpose(), true);
  const Tensor b = Tensor::from_matrix(gen.b.transpose(), true);
  const Tensor x = add_bias(matmul(Tensor::from_matrix(z), at), b);
  const DmdTerm term = dmd_generator_grad(x, real, fake, sched, t, eps, DmdWeighting::kUniform);
  backward(term.loss);
  McGradient g{at.grad_matrix().transpose(), b.grad_matrix().transpose(), Matrix(dim, dim), Matrix(dim, 1)};
  // Standard error over antithetic pair means.
  auto se = [half](const Vector& c) {
    const Vector m = 0.5 * (c.head(half) + c.tail(half));
    return std::sqrt((m.array() - m.mean()).square().mean() / half);
  };
  for (int i = 0; i < dim; ++i) {
    g.se_b(i, 0) = se(-term.direction.col(i));
    for (int j = 0; j < dim; ++j) g.se_A(i, j) = se(-term.direction.col(i).cwiseProduct(z.col(j)));
  }
  return g;
}

Outcome gradient_certification() {
  const auto t0 = Clock::now();
  const NoiseSchedule sched = NoiseSchedule::linear();
  const std::vector<int> t_set{50, 200, 400, 600, 800, 950};
  const int n = 100000;
  double worst = 0.0;
  std::string instances;
  for (int dim : {1, 2}) {
    // Random instances are screened on an independent pilot run: a coordinate
    // whose standard error at n draws exceeds a third of the 5% tolerance cannot
    // be certified at that sample size, so the instance is skipped.
    Rng pick(1000 + dim);
    AffineGenerator gen;
    GmmSpec target;
    AffineGradient want;
    int tried = 0;
    for (;; ++tried) {
      gen.A = SquareMatrix::Identity(dim, dim) * 0.8 + 0.25 * pick.normal_matrix(dim, dim);
      gen.b = pick.normal_matrix(dim, 1).col(0);
      Vector mu = pick.normal_matrix(dim, 1).col(0);
      SquareMatrix cov = SquareMatrix::Identity(dim, dim) * (1.0 + pick.uniform());
      if (dim == 2) cov(0, 1) = cov(1, 0) = 0.4 * (pick.uniform() - 0.5);
      target = GmmSpec::single(mu, cov);
      want = dmd_gradient_oracle(gen, target, sched, t_set);
      const McGradient pilot = dmd_mc_gradient(gen, target, sched, t_set, 10000, pick);
      const double shrink = std::sqrt(10000.0 / n);
      bool ok = true;
      for (int i = 0; i < dim; ++i) {
        ok = ok && 3.0 * pilot.se_b(i, 0) * shrink <= 0.05 * std::abs(want.db(i));
        for (int j = 0; j < dim; ++j) ok = ok && 3.0 * pilot.se_A(i, j) * shrink <= 0.05 * std::abs(want.dA(i, j));
      }
      if (ok || tried == 50) break;
    }
    Rng draw(2000 + dim);
    const McGradient mc = dmd_mc_gradient(gen, target, sched, t_set, n, draw);
    for (int i = 0; i < dim; ++i) {
      std::clog << "  D=" << dim << " db[" << i << "] mc " << mc.db(i, 0) << " oracle " << want.db(i)
                << " se " << mc.se_b(i, 0) << "\n";
      worst = std::max(worst, oracle::rel_err(mc.db(i, 0), want.db(i)));
      for (int j = 0; j < dim; ++j) {
        std::clog << "  D=" << dim << " dA[" << i << "," << j << "] mc " << mc.dA(i, j) << " oracle "
                  << want.dA(i, j) << " se " << mc.se_A(i, j) << "\n";
        worst = std::max(worst, oracle::rel_err(mc.dA(i, j), want.dA(i, j)));
      }
    }
    instances += " D=" + std::to_string(dim) + " after " + std::to_string(tried) + " screened out";
  }
  const double secs = seconds_since(t0);
  return {worst < 0.05 && secs < 60.0, "max rel err " + fmt("%.4f", worst) + " (< 0.05) at " +
                                           std::to_string(n) + " draws," + instances + ", " +
                                           fmt("%.1f", secs) + " s"};
}

Outcome score_identity() {
  const auto t0 = Clock::now();
  const NoiseSchedule sched = NoiseSchedule::linear();
  const GmmSpec ring = GmmSpec::ring(8, 4.0, 0.3);
  const std::vector<int> ts{20, 50, 100, 200, 350, 500, 650, 800, 900, 980};
  double worst = 0.0;
  int probes = 0;
  for (int t : ts)
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) {
        Vector x(2);
        x << -6.0 + 12.0 * i / 9.0, -6.0 + 12.0 * j / 9.0;
        const std::vector<int> tv{t};
        const Matrix mu = optimal_denoiser(ring, sched, x, t).transpose();
        const Matrix s = score_from_denoiser(sched, mu, x.transpose(), tv);
        const Vector want = diffused_score(ring, sched, x, t);
        worst = std::max(worst, (s.row(0).transpose() - want).cwiseAbs().maxCoeff());
        ++probes;
      }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 10.0 && probes == 1000,
          std::to_string(probes) + " probes, max abs err " + fmt("%.2e", worst) + " (< 1e-6), " +
              fmt("%.2f", secs) + " s"};
}

// Random expression graphs over the differentiable ops, rebuilt from leaf values
// so that central differences can re-evaluate them.
struct RandomGraph {
  struct Op {
    int kind;
    int a, b;               // node indices
    std::vector<double> k;  // per-op constants
  };
  std::vector<Shape> leaf_shapes;
  std::vector<Op> ops;
  bool use_mean = false;

  static RandomGraph make(Rng& rng) {
    RandomGraph g;
    const std::size_t rows = 2 + rng.uniform_int(0, 3);
    const std::size_t cols = 1 + rng.uniform_int(0, 3);
    std::vector<Shape> shapes;
    auto add_leaf = [&](Shape s) {
      g.leaf_shapes.push_back(s);
      shapes.push_back(s);
      return static_cast<int>(shapes.size()) - 1;
    };
    add_leaf({rows, cols});
    add_leaf({rows, cols});
    const int n_ops = 3 + rng.uniform_int(0, 5);
    for (int i = 0; i < n_ops; ++i) {
      const int a = static_cast<int>(shapes.size()) - 1 - rng.uniform_int(0, std::min<int>(2, shapes.size() - 1));
      const Shape sa = shapes[a];
      Op op{rng.uniform_int(0, 11), a, -1, {}};
      Shape out = sa;
      // Find a partner of identical shape for binary elementwise ops.
      int partner = -1;
      for (int j = static_cast<int>(shapes.size()) - 1; j >= 0; --j)
        if (j != a && shapes[j] == sa) partner = j;
      if ((op.kind <= 2) && partner < 0) op.kind = 5;
      switch (op.kind) {
        case 0:
        case 1:
        case 2: op.b = partner; break;  // add, sub, mul
        case 3: {                       // matmul with a fresh leaf
          const std::size_t m = 1 + rng.uniform_int(0, 3);
          op.b = static_cast<int>(g.leaf_shapes.size());
          g.leaf_shapes.push_back({sa[1], m});
          out = {sa[0], m};
          break;
        }
        case 4:  // add_bias with a fresh leaf
          op.b = static_cast<int>(g.leaf_shapes.size());
          g.leaf_shapes.push_back({sa[1]});
          break;
        case 5: op.k = {rng.normal()}; break;  // scale
        case 6:                                // scale_rows
          for (std::size_t r = 0; r < sa[0]; ++r) op.k.push_back(rng.normal());
          break;
        case 7:   // silu
        case 8:   // softplus
        case 9:   // square
        case 10:  // clamp with wide bounds
          break;
        case 11:
          op.b = partner >= 0 ? partner : a;  // concat_cols
          out = {sa[0], sa[1] + shapes[op.b][1]};
          break;
      }
      g.ops.push_back(op);
      shapes.push_back(out);
    }
    g.use_mean = rng.uniform_int(0, 1) == 1;
    return g;
  }

  // Leaf tensors are passed in; fresh matmul/bias leaves are referenced by index
  // among them. Returns the scalar loss.
  Tensor eval(const std::vector<Tensor>& leaves) const {
    std::vector<Tensor> nodes{leaves[0], leaves[1]};
    for (const Op& op : ops) {
      const Tensor& a = nodes[op.a];
      Tensor r;
      switch (op.kind) {
        case 0: r = a + nodes[op.b]; break;
        case 1: r = a - nodes[op.b]; break;
        case 2: r = a * nodes[op.b]; break;
        case 3: r = matmul(a, leaves[op.b]); break;
        case 4: r = add_bias(a, leaves[op.b]); break;
        case 5: r = scale(a, op.k[0]); break;
        case 6: r = scale_rows(a, op.k); break;
        case 7: r = silu(a); break;
        case 8: r = softplus(a); break;
        case 9: r = square(a); break;
        case 10: r = clamp(a, -50.0, 50.0); break;
        case 11: r = concat_cols(a, nodes[op.b]); break;
      }
      nodes.push_back(r);
    }
    // Weighted sum so the upstream gradient is not uniform.
    const Tensor& last = nodes.back();
    std::vector<double> w(last.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * i);
    const Tensor weighted = last * Tensor::from_data(last.shape(), w);
    return use_mean ? mean(weighted) : sum(weighted);
  }
};

Outcome autodiff_soundness() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  int passed = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const RandomGraph g = RandomGraph::make(rng);
    std::vector<std::vector<double>> values;
    for (const Shape& s : g.leaf_shapes) {
      std::vector<double> v(shape_numel(s));
      for (double& x : v) x = 0.8 * rng.normal();
      values.push_back(v);
    }
    auto build = [&](bool grad, const std::vector<std::vector<double>>& vals) {
      std::vector<Tensor> leaves;
      for (std::size_t i = 0; i < vals.size(); ++i)
        leaves.push_back(Tensor::from_data(g.leaf_shapes[i], vals[i], grad));
      return leaves;
    };
    const auto leaves = build(true, values);
    backward(g.eval(leaves));
    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < values.size(); ++l) {
      const auto grad = leaves[l].has_grad() ? std::vector<double>(leaves[l].grad().begin(), leaves[l].grad().end())
                                             : std::vector<double>(values[l].size(), 0.0);
      const auto fd = oracle::fd_gradient(
          [&](const std::vector<double>& x) {
            auto vals = values;
            vals[l] = x;
            return g.eval(build(false, vals)).item();
          },
          values[l], 1e-6);
      for (std::size_t i = 0; i < fd.size(); ++i) {
        num += (grad[i] - fd[i]) * (grad[i] - fd[i]);
        den += fd[i] * fd[i];
      }
    }
    const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
    worst = std::max(worst, rel);
    passed += rel < 1e-4;
  }
  const double secs = seconds_since(t0);
  return {passed == 100 && secs < 60.0, std::to_string(passed) + "/100 graphs, worst rel err " +
                                            fmt("%.2e", worst) + " (< 1e-4), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------

std::string median_line(const AblationReport& r) {
  std::ostringstream os;
  for (const auto& row : r.rows) os << row.variant << "=" << fmt("%.4f", row.median_fd()) << " ";
  return os.str();
}

bool all_cells_ok(const AblationReport& r, std::string& why) {
  for (const auto& row : r.rows)
    for (const auto& c : row.cells)
      if (!c.record) {
        why = row.variant + " seed " + std::to_string(c.seed) + ": " + c.error;
        return false;
      }
  return true;
}

double max_run_seconds(const AblationReport& r) {
  double m = 0.0;
  for (const auto& row : r.rows)
    for (const auto& c : row.cells)
      if (c.record) m = std::max(m, c.record->final_row().wallclock);
  return m;
}

Outcome ttur_stability(Context& ctx) {
  const auto t0 = Clock::now();
  const AblationGrid grid = AblationGrid::load(ctx.configs / "stability.json");
  const AblationReport r = run_ablation(grid, ctx.out, ctx.options);
  std::string why;
  if (!all_cells_ok(r, why)) return {false, why};
  const double s1 = r.row("ttur1").median_fluctuation(), s5 = r.row("ttur5").median_fluctuation();
  const double longest = max_run_seconds(r);
  return {s1 >= 2.0 * s5 && longest <= 600.0,
          "median detrended std ttur1=" + fmt("%.5f", s1) + " ttur5=" + fmt("%.5f", s5) + " ratio " +
              fmt("%.2f", s1 / s5) + " (>= 2), longest run " + fmt("%.0f", longest) + " s, total " +
              fmt("%.0f", seconds_since(t0)) + " s"};
}

Outcome onestep_ordering(Context& ctx) {
  const auto t0 = Clock::now();
  const AblationGrid grid = AblationGrid::load(ctx.configs / "onestep.json");
  ctx.onestep = run_ablation(grid, ctx.out, ctx.options);
  const double secs = seconds_since(t0);
  const AblationReport& r = *ctx.onestep;
  std::string why;
  if (!all_cells_ok(r, why)) return {false, why};
  const double reg = r.row("dmd-regression").median_fd();
  const double noreg = r.row("no-regression").median_fd();
  const double ttur = r.row("ttur").median_fd();
  const double gan = r.row("ttur-gan").median_fd();
  const bool order = gan < ttur && ttur <= 1.1 * reg && noreg > reg && noreg > ttur && noreg > gan;
  return {order && secs <= 90 * 60.0,
          median_line(r) + "| need ttur-gan < ttur <= 1.1*dmd-regression, no-regression worst; " +
              fmt("%.0f", secs) + " s"};
}

Outcome multistep_ordering(Context& ctx) {
  const auto t0 = Clock::now();
  const AblationGrid grid = AblationGrid::load(ctx.configs / "multistep.json");
  const AblationReport r = run_ablation(grid, ctx.out, ctx.options);
  const double secs = seconds_since(t0);
  std::string why;
  if (!all_cells_ok(r, why)) return {false, why};
  const double full = r.row("full").median_fd();
  const double fwd = r.row("forward-noising").median_fd();
  const double nogan = r.row("no-gan").median_fd();
  return {full < fwd && nogan > full && secs <= 60 * 60.0,
          median_line(r) + "| need full < forward-noising, no-gan > full; " + fmt("%.0f", secs) + " s"};
}

Outcome student_vs_teacher(Context& ctx) {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_experiment_config(ctx.configs / "reference.json");
  Pipeline p(cfg, Layout(ctx.out / "reference"), ctx.options);
  p.write_snapshot();
  p.train_teacher();
  const DistillArtifact d = p.distill();
  const EvalReport rep = p.evaluate(d.checkpoint_path, cfg.metrics.samples);
  const double secs = seconds_since(t0);
  const EvalRow& teacher = rep.rows.at(0);
  const EvalRow& student = rep.rows.at(1);
  const bool ok = student.metrics.fd <= 1.25 * teacher.metrics.fd && student.metrics.mode_recall == 1.0 &&
                  secs <= 15 * 60.0;
  return {ok, "student FD " + fmt("%.4f", student.metrics.fd) + " vs teacher " + teacher.model + " FD " +
                  fmt("%.4f", teacher.metrics.fd) + " (x1.25 = " + fmt("%.4f", 1.25 * teacher.metrics.fd) +
                  "), student mode_recall " + fmt("%.3f", student.metrics.mode_recall) + ", " +
                  fmt("%.0f", secs) + " s"};
}

Outcome update_frequency(Context& ctx) {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_experiment_config(ctx.configs / "sweep.json");
  Pipeline p(cfg, Layout(ctx.out / "sweep", ctx.out), ctx.options);
  p.write_snapshot();
  p.train_teacher();
  const SweepReport r = p.sweep();
  const double secs = seconds_since(t0);
  std::ostringstream os;
  for (const auto& e : r.entries) os << e.name << "=" << fmt("%.4f", e.record.final_fd()) << " ";
  const SweepEntry& best = r.best_by_final_fd();
  return {best.ttur_ratio == 5 && best.fake_lr == cfg.distill.fake_lr && secs <= 2 * 3600.0,
          os.str() + "| best " + best.name + " at " + std::to_string(r.budget_units) + " cost units; " +
              fmt("%.0f", secs) + " s"};
}

Outcome determinism(Context& ctx) {
  const auto t0 = Clock::now();
  if (!ctx.onestep) return {false, "criterion 5 grid did not run"};
  const fs::path rerun = ctx.out / "rerun";
  fs::remove_all(rerun);
  const AblationGrid grid = AblationGrid::load(ctx.configs / "onestep.json");
  const AblationReport again = run_ablation(grid, rerun, ctx.options);
  int compared = 0, identical = 0;
  for (const auto& row : ctx.onestep->rows) {
    const AblationRow& other = again.row(row.variant);
    for (std::size_t i = 0; i < row.cells.size(); ++i) {
      ++compared;
      const auto& a = row.cells[i].record;
      const auto& b = other.cells.at(i).record;
      if (a && b && a->to_csv(false) == b->to_csv(false)) ++identical;
    }
  }
  return {compared > 0 && identical == compared,
          std::to_string(identical) + "/" + std::to_string(compared) +
              " run records byte-identical (wallclock excluded), fresh teacher and pairs, " +
              fmt("%.0f", seconds_since(t0)) + " s"};
}

Outcome pair_reproducibility(Context& ctx) {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_experiment_config(ctx.configs / "reference.json");
  Pipeline p(cfg, Layout(ctx.out / "reference"), ctx.options);
  const DenoiserModel teacher = p.train_teacher().model;
  PairOptions o;
  o.count = 4000;
  o.seed = cfg.pairs.seed;
  o.ode_steps = cfg.pairs.ode_steps;
  o.range = cfg.sampler_range();
  const auto a = encode_pairs(generate_pairs(teacher, cfg.noise_schedule(), o));
  const auto b = encode_pairs(generate_pairs(teacher, cfg.noise_schedule(), o));
  bool threads_ok = true;
  for (int threads : {2, 3, 4}) {
    o.threads = threads;
    threads_ok = threads_ok && encode_pairs(generate_pairs(teacher, cfg.noise_schedule(), o)) == a;
  }
  const double secs = seconds_since(t0);
  return {a == b && threads_ok && secs < 60.0,
          std::string("rerun ") + (a == b ? "identical" : "DIFFERS") + ", threads 1-4 " +
              (threads_ok ? "identical" : "DIFFER") + ", " + std::to_string(a.size()) + " bytes, " +
              fmt("%.1f", secs) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.configs = DMD2_CONFIG_DIR;
  ctx.out = DMD2_ACCEPTANCE_OUT;
  bool keep = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) ctx.out = argv[++i];
    else if (a == "--keep") keep = true;
    else only.insert(std::stoi(a));
  }
  if (!keep) fs::remove_all(ctx.out);
  fs::create_directories(ctx.out);
  ctx.options.log = &std::clog;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-certification", gradient_certification},
      {"score-identity", score_identity},
      {"autodiff-soundness", autodiff_soundness},
      {"ttur-stability", [&] { return ttur_stability(ctx); }},
      {"onestep-ablation-ordering", [&] { return onestep_ordering(ctx); }},
      {"multistep-ablation-ordering", [&] { return multistep_ordering(ctx); }},
      {"student-vs-teacher", [&] { return student_vs_teacher(ctx); }},
      {"update-frequency-sweep", [&] { return update_frequency(ctx); }},
      {"determinism", [&] { return determinism(ctx); }},
      {"pair-reproducibility", [&] { return pair_reproducibility(ctx); }},
  };
  if (only.count(9)) only.insert(5);

  std::vector<std::string> lines;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const Error& e) {
      o = {false, "error " + std::string(code_name(e.code())) + ": " + e.what()};
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::ostringstream line;
    line << "criterion " << n << " " << criteria[i].first << ": " << (o.pass ? "PASS" : "FAIL") << "  "
         << o.detail;
    lines.push_back(line.str());
    std::cout << line.str() << std::endl;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
