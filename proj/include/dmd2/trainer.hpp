#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dmd2/fake_score.hpp"
#include "dmd2/generator.hpp"
#include "dmd2/gmm.hpp"
#include "dmd2/pairs.hpp"
#include "dmd2/run_record.hpp"

namespace dmd2 {

struct TrainConfig {
  int iterations = 2000;  // generator updates
  int ttur_ratio = 5;     // fake-score updates per generator update
  double dm_weight = 1.0;  // 0 turns the distribution-matching term off
  double gan_weight = 0.0;  // lambda on the generator's GAN term
  double disc_weight = 1.0;  // classification loss weight inside fake updates (used when gan_weight > 0)
  bool regression = false;
  double regression_weight = 1.0;
  std::vector<int> schedule_steps;  // empty: one-step student
  bool backward_sim = true;
  // Multi-step students: train the fake score on last-step outputs only, i.e. on
  // the sampler's output distribution, instead of outputs pooled over all steps.
  bool fake_final_step = true;
  int batch_size = 128;
  int fake_batch_size = 128;
  double gen_lr = 1e-4;
  double fake_lr = 1e-4;
  double head_lr_scale = 1.0;  // discriminator head lr = fake_lr * head_lr_scale
  bool cosine_decay = false;   // anneal both learning rates to zero over the run
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double t_lo_frac = 0.02;
  double t_hi_frac = 0.98;
  // Upper end of the timesteps at which the GAN classifier sees noised samples.
  double gan_t_hi_frac = 0.98;
  DmdWeighting weighting = DmdWeighting::kNormalized;
  std::vector<std::size_t> head_hidden{64};
  // |mean_stat - target mean| beyond this marks the run unstable; <= 0 disables.
  double instability_bound = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool gan_enabled() const { return gan_weight > 0.0; }
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EvalConfig {
  int every = 50;
  int samples = 4096;
  double mode_radius = 3.0;
  int diversity_groups = 16;
  int diversity_group_size = 8;
  std::uint64_t seed = 7;
};

nlohmann::json eval_config_to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);

struct EvalResult {
  double fd = 0.0;
  double mode_recall = 0.0;
  double diversity = 0.0;
  double mean_stat = 0.0;
};

// Metrics of generator samples on the fixed evaluation noise of `eval`.
EvalResult evaluate_generator(const Generator& gen, const GmmSpec& target, const EvalConfig& eval);
EvalResult evaluate_samples(const Matrix& samples, const GmmSpec& target, const EvalConfig& eval);

enum class TrainEvent { kBeforeGenerator, kAfterGenerator, kBeforeFake, kAfterFake };

struct TrainHooks {
  std::function<void(TrainEvent, int iter, const Generator&, const FakeScoreModel&)> on_event;
  // Called after every checkpoint row is appended.
  std::function<void(const RunRow&, const Generator&)> on_checkpoint;
};

struct DistillResult {
  Generator generator;
  FakeScoreModel fake;
  RunRecord record;
};

// Alternating distillation: per iteration one generator update, then
// ttur_ratio fake-score (and discriminator) updates. The teacher is frozen and
// also initializes both the generator and the fake-score backbone.
DistillResult ttur_train(const TrainConfig& config, const EvalConfig& eval,
                         const DenoiserModel& teacher, const GmmSpec& target,
                         const PairDataset* pairs = nullptr, const TrainHooks& hooks = {});

struct SweepEntry {
  std::string name;
  int ttur_ratio = 1;
  double fake_lr = 0.0;
  int iterations = 0;
  RunRecord record;
};

struct SweepReport {
  std::vector<SweepEntry> entries;
  std::uint64_t budget_units = 0;

  const SweepEntry& best_by_final_fd() const;
  std::string table() const;
};

// One run per ratio plus, optionally, an asynchronous-learning-rate variant
// (ratio 1, fake lr x async_lr_factor). Every variant receives the same compute
// budget in cost units: one unit per generator or fake-score update, so a
// variant with ratio r runs budget / (1 + r) iterations.
SweepReport update_frequency_sweep(const TrainConfig& base, const EvalConfig& eval,
                                   const DenoiserModel& teacher, const GmmSpec& target,
                                   const std::vector<int>& ratios, std::uint64_t budget_units,
                                   bool include_async = true, double async_lr_factor = 5.0);

std::uint64_t cost_units(int iterations, int ttur_ratio);

}  // namespace dmd2
