#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dmd2/diffusion.hpp"
#include "dmd2/errors.hpp"
#include "dmd2/gmm.hpp"
#include "dmd2/trainer.hpp"

namespace dmd2 {

class ConfigError : public Error {
 public:
  ConfigError(ErrorCode code, const std::string& what) : Error(code, what) {}
};

inline constexpr int kConfigSchemaVersion = 1;

struct TargetConfig {
  std::string type = "ring";  // "ring" or "gmm"
  int modes = 8;
  double radius = 4.0;
  double std_dev = 0.3;
  GmmSpec gmm;  // used when type == "gmm"

  GmmSpec build() const;
};

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{64, 64, 64};
  int time_frequencies = 6;
  double data_scale = 0.0;  // 0 means "auto": the target's largest coordinate std
};

struct TeacherBlock {
  int steps = 1000;
  int batch_size = 256;
  double lr = 2e-3;
  double weight_decay = 0.0;
  bool cosine_decay = true;
  double t_lo_frac = 0.02;
  double t_hi_frac = 0.98;
  std::uint64_t seed = 1;
  int ode_steps = 50;  // sampler steps used when the teacher itself is evaluated
};

struct PairsBlock {
  int count = 20000;
  std::uint64_t seed = 3;
  int ode_steps = 50;
  int threads = 1;
};

struct SweepBlock {
  std::vector<int> ratios{1, 5, 10};
  bool include_async = true;
  double async_lr_factor = 5.0;
  std::uint64_t budget_units = 24000;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string name = "experiment";
  TargetConfig target;
  ScheduleConfig schedule;
  ModelConfig model;
  TeacherBlock teacher;
  PairsBlock pairs;
  TrainConfig distill;
  EvalConfig metrics;
  SweepBlock sweep;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_dir;  // empty: resolved by the CLI

  nlohmann::json to_json() const;
  // Strict: every key of the canonical form is required and no other key is accepted.
  static ExperimentConfig from_json(const nlohmann::json& j);

  // Hash of the canonical serialization; key order in the source file is irrelevant.
  std::uint64_t hash() const;
  // Hash of the blocks that determine the teacher (target, schedule, model, teacher).
  std::uint64_t teacher_hash() const;
  // Teacher hash combined with the pairs block.
  std::uint64_t pairs_hash() const;

  GmmSpec target_spec() const { return target.build(); }
  NoiseSchedule noise_schedule() const { return schedule.build(); }
  DenoiserArch arch() const;
  TeacherConfig teacher_config() const;
  TimestepRange sampler_range() const;
};

// Parses JSON text; syntax errors report line and column, schema errors the key path.
nlohmann::json parse_json_text(const std::string& text, const std::string& source);
nlohmann::json read_json_file(const std::filesystem::path& path);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// RFC 7386 merge patch (null deletes a key).
nlohmann::json merge_patch(nlohmann::json base, const nlohmann::json& patch);

struct AblationVariant {
  std::string name;
  nlohmann::json patch;
};

struct AblationGrid {
  std::string name;
  nlohmann::json base;  // canonical experiment config
  std::vector<std::uint64_t> seeds;
  std::vector<AblationVariant> variants;

  // Applies the variant patch to the base and re-validates it strictly.
  ExperimentConfig variant_config(const AblationVariant& v) const;
  ExperimentConfig base_config() const { return ExperimentConfig::from_json(base); }
  const AblationVariant& variant(const std::string& name) const;

  // base may be an inline object or a path relative to the grid file.
  static AblationGrid from_json(const nlohmann::json& j, const std::filesystem::path& dir);
  static AblationGrid load(const std::filesystem::path& path);
};

}  // namespace dmd2
