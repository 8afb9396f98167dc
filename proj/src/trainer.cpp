#include "dmd2/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "dmd2/diffusion.hpp"
#include "dmd2/errors.hpp"
#include "dmd2/hash.hpp"
#include "dmd2/losses.hpp"
#include "dmd2/metrics.hpp"

namespace dmd2 {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("train config: " + m); };
  if (iterations < 0) fail("iterations must be >= 0");
  if (ttur_ratio < 1) fail("ttur_ratio must be >= 1");
  if (gan_weight < 0.0) fail("gan_weight must be >= 0");
  if (dm_weight < 0.0) fail("dm_weight must be >= 0");
  if (disc_weight < 0.0) fail("disc_weight must be >= 0");
  if (regression_weight < 0.0) fail("regression_weight must be >= 0");
  if (batch_size < 2 || fake_batch_size < 2) fail("batch sizes must be >= 2");
  if (!(gen_lr > 0.0) || !(fake_lr > 0.0) || !(head_lr_scale > 0.0))
    fail("learning rates must be positive");
  if (!(t_lo_frac >= 0.0 && t_lo_frac < t_hi_frac && t_hi_frac <= 1.0))
    fail("t range fractions must satisfy 0 <= lo < hi <= 1");
  if (!(gan_t_hi_frac > t_lo_frac && gan_t_hi_frac <= t_hi_frac))
    fail("gan_t_hi_frac must lie in (t_lo_frac, t_hi_frac]");
  if (regression && !schedule_steps.empty()) fail("regression is only defined for one-step students");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"ttur_ratio", c.ttur_ratio},
          {"dm_weight", c.dm_weight},
          {"gan_weight", c.gan_weight},
          {"disc_weight", c.disc_weight},
          {"regression", c.regression},
          {"regression_weight", c.regression_weight},
          {"schedule_steps", c.schedule_steps},
          {"backward_sim", c.backward_sim},
          {"fake_final_step", c.fake_final_step},
          {"batch_size", c.batch_size},
          {"fake_batch_size", c.fake_batch_size},
          {"gen_lr", c.gen_lr},
          {"fake_lr", c.fake_lr},
          {"head_lr_scale", c.head_lr_scale},
          {"cosine_decay", c.cosine_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"t_lo_frac", c.t_lo_frac},
          {"t_hi_frac", c.t_hi_frac},
          {"gan_t_hi_frac", c.gan_t_hi_frac},
          {"weighting", weighting_name(c.weighting)},
          {"head_hidden", c.head_hidden},
          {"instability_bound", c.instability_bound},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("iterations", c.iterations);
  get("ttur_ratio", c.ttur_ratio);
  get("dm_weight", c.dm_weight);
  get("gan_weight", c.gan_weight);
  get("disc_weight", c.disc_weight);
  get("regression", c.regression);
  get("regression_weight", c.regression_weight);
  get("schedule_steps", c.schedule_steps);
  get("backward_sim", c.backward_sim);
  get("fake_final_step", c.fake_final_step);
  get("batch_size", c.batch_size);
  get("fake_batch_size", c.fake_batch_size);
  get("gen_lr", c.gen_lr);
  get("fake_lr", c.fake_lr);
  get("head_lr_scale", c.head_lr_scale);
  get("cosine_decay", c.cosine_decay);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("weight_decay", c.weight_decay);
  get("t_lo_frac", c.t_lo_frac);
  get("t_hi_frac", c.t_hi_frac);
  get("gan_t_hi_frac", c.gan_t_hi_frac);
  if (j.contains("weighting")) c.weighting = weighting_from_name(j.at("weighting").get<std::string>());
  get("head_hidden", c.head_hidden);
  get("instability_bound", c.instability_bound);
  get("seed", c.seed);
  return c;
}

nlohmann::json eval_config_to_json(const EvalConfig& c) {
  return {{"every", c.every},
          {"samples", c.samples},
          {"mode_radius", c.mode_radius},
          {"diversity_groups", c.diversity_groups},
          {"diversity_group_size", c.diversity_group_size},
          {"seed", c.seed}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("every", c.every);
  get("samples", c.samples);
  get("mode_radius", c.mode_radius);
  get("diversity_groups", c.diversity_groups);
  get("diversity_group_size", c.diversity_group_size);
  get("seed", c.seed);
  return c;
}

EvalResult evaluate_samples(const Matrix& samples, const GmmSpec& target, const EvalConfig& eval) {
  EvalResult r;
  if (!samples.allFinite()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan, nan};
  }
  r.fd = frechet_distance(SampleStats::from_samples(samples), SampleStats::from_gmm(target));
  r.mode_recall = mode_recall(samples, target, eval.mode_radius);
  const int g = eval.diversity_groups;
  const int m = eval.diversity_group_size;
  if (g > 0 && m >= 2 && static_cast<Eigen::Index>(g) * m <= samples.rows()) {
    std::vector<Matrix> groups;
    for (int k = 0; k < g; ++k) groups.push_back(samples.middleRows(k * m, m));
    r.diversity = diversity_score(groups);
  }
  r.mean_stat = samples.col(0).mean();
  return r;
}

EvalResult evaluate_generator(const Generator& gen, const GmmSpec& target, const EvalConfig& eval) {
  Rng noise_rng(mix_seed(eval.seed, 0));
  Rng chain_rng(mix_seed(eval.seed, 1));
  const Matrix z = noise_rng.normal_matrix(eval.samples, gen.dim());
  return evaluate_samples(gen.sample(z, chain_rng), target, eval);
}

namespace {

struct StepInputs {
  Matrix x;
  std::vector<int> t;
};

// Inputs for the supervised generator call: pure-noise input for one-step
// students; for multi-step students a uniformly drawn step per row whose input
// comes from the student's own chain or from forward-diffused target data.
StepInputs build_inputs(const Generator& gen, const TrainConfig& c, const GmmSpec& target,
                        int rows, Rng& rng, bool final_step = false) {
  const Matrix z = rng.normal_matrix(rows, gen.dim());
  const auto& steps = gen.schedule_steps();
  StepInputs in;
  if (gen.mode() == GeneratorMode::kOneStep) {
    in.x = gen.initial_input(z);
    in.t.assign(rows, steps.front());
    return in;
  }
  std::vector<int> idx(rows);
  for (int& i : idx) i = final_step ? gen.num_steps() : static_cast<int>(rng.uniform_int(1, gen.num_steps()));
  if (c.backward_sim) {
    in.x = gen.backward_simulate(z, idx, rng);
  } else {
    in.x = gen.initial_input(z);
    const Matrix real = target.sample(rows, rng);
    const Matrix eps = rng.normal_matrix(rows, gen.dim());
    const auto& sched = gen.backbone().schedule();
    for (int r = 0; r < rows; ++r) {
      if (idx[r] == 1) continue;
      const int t = steps[idx[r] - 1];
      in.x.row(r) = sched.alpha(t) * real.row(r) + sched.sigma(t) * eps.row(r);
    }
  }
  in.t.resize(rows);
  for (int r = 0; r < rows; ++r) in.t[r] = steps[idx[r] - 1];
  return in;
}

AdamWOptions adam_options(const TrainConfig& c, double lr) {
  AdamWOptions o;
  o.lr = lr;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.weight_decay = c.weight_decay;
  return o;
}

}  // namespace

DistillResult ttur_train(const TrainConfig& config, const EvalConfig& eval,
                         const DenoiserModel& teacher, const GmmSpec& target,
                         const PairDataset* pairs, const TrainHooks& hooks) {
  config.validate();
  if (config.regression && (pairs == nullptr || pairs->count() == 0))
    throw ContractError("ttur_train: regression requested without a pair dataset");
  if (pairs && config.regression && pairs->dim != teacher.dim())
    throw ContractError("ttur_train: pair dataset dimension does not match the teacher");
  if (target.dim() != teacher.dim())
    throw DimensionError("ttur_train: target dimension does not match the teacher");

  const NoiseSchedule& schedule = teacher.schedule();
  const TimestepRange range = trained_range(schedule, config.t_lo_frac, config.t_hi_frac);
  const TimestepRange gan_range = trained_range(schedule, config.t_lo_frac, config.gan_t_hi_frac);
  const bool shared_gan_t = gan_range.lo == range.lo && gan_range.hi == range.hi;

  Rng head_rng(mix_seed(config.seed, 20));
  Rng gen_rng(mix_seed(config.seed, 21));
  Rng fake_rng(mix_seed(config.seed, 22));

  Generator gen = config.schedule_steps.empty()
                      ? Generator::one_step(teacher)
                      : Generator::multi_step(teacher, config.schedule_steps);
  FakeScoreModel fake(teacher, config.head_hidden, head_rng);
  AdamW gen_opt(gen.parameters(), adam_options(config, config.gen_lr));
  AdamW fake_opt(fake.parameters(), adam_options(config, config.fake_lr));
  fake_opt.set_lr_scale("head.", config.head_lr_scale);

  RunRecord rec;
  rec.config = {{"train", train_config_to_json(config)}, {"eval", eval_config_to_json(eval)}};
  rec.config_hash = fnv1a(rec.config.dump());
  rec.schedule = gen.schedule_steps();

  const double target_mean0 = target.mean()(0);
  const auto start = std::chrono::steady_clock::now();
  double dsm_sum = 0.0, d_sum = 0.0, g_sum = 0.0;
  int fake_count = 0, gen_count = 0;

  auto checkpoint = [&](int iter) {
    const EvalResult m = evaluate_generator(gen, target, eval);
    RunRow row;
    row.iter = iter;
    row.fd = m.fd;
    row.mode_recall = m.mode_recall;
    row.diversity = m.diversity;
    row.mean_stat = m.mean_stat;
    row.dsm_loss = fake_count ? dsm_sum / fake_count : 0.0;
    row.gan_d_loss = fake_count ? d_sum / fake_count : 0.0;
    row.gan_g_loss = gen_count ? g_sum / gen_count : 0.0;
    row.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rec.rows.push_back(row);
    dsm_sum = d_sum = g_sum = 0.0;
    fake_count = gen_count = 0;
    if (!std::isfinite(m.fd) || !std::isfinite(m.mean_stat))
      rec.mark_unstable(iter, "non-finite metric");
    else if (config.instability_bound > 0.0 &&
             std::abs(m.mean_stat - target_mean0) > config.instability_bound)
      rec.mark_unstable(iter, "mean statistic excursion");
    if (hooks.on_checkpoint) hooks.on_checkpoint(row, gen);
  };
  auto notify = [&](TrainEvent ev, int iter) {
    if (hooks.on_event) hooks.on_event(ev, iter, gen, fake);
  };

  checkpoint(0);
  const int every = std::max(1, eval.every);
  for (int iter = 1; iter <= config.iterations; ++iter) {
    if (config.cosine_decay) {
      const double f = 0.5 * (1.0 + std::cos(std::numbers::pi * (iter - 1) / config.iterations));
      gen_opt.set_lr(config.gen_lr * f);
      fake_opt.set_lr(config.fake_lr * f);
    }
    try {
      // Generator update. Both score networks are read-only here.
      notify(TrainEvent::kBeforeGenerator, iter);
      {
        const StepInputs in = build_inputs(gen, config, target, config.batch_size, gen_rng);
        const Tensor x_hat = gen.forward(Tensor::from_matrix(in.x), in.t);
        const auto t = sample_timesteps(gen_rng, range, config.batch_size);
        const Matrix eps = gen_rng.normal_matrix(config.batch_size, gen.dim());
        Tensor loss;
        auto accumulate = [&](const Tensor& term) { loss = loss.defined() ? loss + term : term; };
        if (config.dm_weight > 0.0) {
          const DmdTerm dmd = dmd_generator_grad(x_hat, teacher, fake.backbone(), schedule, t, eps,
                                                 config.weighting);
          accumulate(scale(dmd.loss, config.dm_weight));
        }
        if (config.gan_enabled()) {
          Tensor g;
          if (shared_gan_t) {
            g = gan_loss_generator(fake, x_hat, schedule, t, eps);
          } else {
            const auto t_gan = sample_timesteps(gen_rng, gan_range, config.batch_size);
            const Matrix eps_gan = gen_rng.normal_matrix(config.batch_size, gen.dim());
            g = gan_loss_generator(fake, x_hat, schedule, t_gan, eps_gan);
          }
          g_sum += g.item();
          accumulate(scale(g, config.gan_weight));
        }
        if (config.regression) {
          Matrix z(config.batch_size, gen.dim()), y(config.batch_size, gen.dim());
          for (int r = 0; r < config.batch_size; ++r) {
            const auto k = static_cast<Eigen::Index>(
                gen_rng.uniform_int(0, static_cast<int>(pairs->count()) - 1));
            z.row(r) = pairs->z.row(k);
            y.row(r) = pairs->y.row(k);
          }
          accumulate(scale(regression_loss(gen, z, y), config.regression_weight));
        }
        ++gen_count;
        if (loss.defined()) {
          backward(loss);
          gen_opt.step();
          gen_opt.zero_grad();
        }
        ++rec.generator_updates;
      }
      notify(TrainEvent::kAfterGenerator, iter);

      for (int k = 0; k < config.ttur_ratio; ++k) {
        notify(TrainEvent::kBeforeFake, iter);
        const StepInputs in = build_inputs(gen, config, target, config.fake_batch_size, fake_rng,
                                            config.fake_final_step);
        const Matrix x_fake = gen.backbone().denoise(in.x, in.t);
        Matrix real;
        if (config.gan_enabled()) real = target.sample(config.fake_batch_size, fake_rng);
        const auto stats = fake_score_dsm_update(fake, fake_opt, x_fake, schedule, range, fake_rng,
                                                 config.gan_enabled() ? config.disc_weight : 0.0,
                                                 config.gan_enabled() ? &real : nullptr, gan_range);
        dsm_sum += stats.dsm_loss;
        d_sum += stats.gan_d_loss;
        ++fake_count;
        ++rec.fake_updates;
        notify(TrainEvent::kAfterFake, iter);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumerical && e.code() != ErrorCode::kPoisonedState) throw;
      rec.aborted = true;
      rec.mark_unstable(iter, std::string("numerical failure: ") + e.what());
      break;
    }
    if (iter % every == 0 || iter == config.iterations) checkpoint(iter);
  }
  rec.cost_units = rec.generator_updates + rec.fake_updates;
  return {std::move(gen), std::move(fake), std::move(rec)};
}

std::uint64_t cost_units(int iterations, int ttur_ratio) {
  return static_cast<std::uint64_t>(iterations) * static_cast<std::uint64_t>(1 + ttur_ratio);
}

const SweepEntry& SweepReport::best_by_final_fd() const {
  if (entries.empty()) throw ContractError("sweep: no entries");
  const SweepEntry* best = &entries.front();
  for (const auto& e : entries) {
    const double fd = e.record.final_fd();
    if (std::isfinite(fd) && (!std::isfinite(best->record.final_fd()) || fd < best->record.final_fd()))
      best = &e;
  }
  return *best;
}

std::string SweepReport::table() const {
  std::ostringstream os;
  os << "variant      ratio  fake_lr    iters  final_fd     fluct_std    status\n";
  for (const auto& e : entries) {
    const auto trace = e.record.mean_stats(0.5);
    double fluct = std::numeric_limits<double>::quiet_NaN();
    if (trace.size() >= 10) fluct = mean_statistic_trace(trace).fluctuation_std;
    os << std::left << std::setw(13) << e.name << std::setw(7) << e.ttur_ratio << std::setw(11)
       << e.fake_lr << std::setw(7) << e.iterations << std::setw(13) << e.record.final_fd()
       << std::setw(13) << fluct << (e.record.unstable ? "unstable" : "stable") << "\n";
  }
  return os.str();
}

SweepReport update_frequency_sweep(const TrainConfig& base, const EvalConfig& eval,
                                   const DenoiserModel& teacher, const GmmSpec& target,
                                   const std::vector<int>& ratios, std::uint64_t budget_units,
                                   bool include_async, double async_lr_factor) {
  if (ratios.empty()) throw ContractError("sweep: ratios must be non-empty");
  SweepReport report;
  report.budget_units = budget_units;
  auto run = [&](const std::string& name, int ratio, double fake_lr) {
    TrainConfig c = base;
    c.ttur_ratio = ratio;
    c.fake_lr = fake_lr;
    c.iterations = static_cast<int>(budget_units / (1 + static_cast<std::uint64_t>(ratio)));
    SweepEntry e{name, ratio, fake_lr, c.iterations, {}};
    e.record = ttur_train(c, eval, teacher, target).record;
    e.record.name = name;
    report.entries.push_back(std::move(e));
  };
  for (int r : ratios) run("ratio-" + std::to_string(r), r, base.fake_lr);
  if (include_async) run("async-lr", 1, base.fake_lr * async_lr_factor);
  return report;
}

}  // namespace dmd2
