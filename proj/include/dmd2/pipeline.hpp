#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dmd2/config.hpp"
#include "dmd2/generator.hpp"
#include "dmd2/pairs.hpp"
#include "dmd2/run_record.hpp"
#include "dmd2/trainer.hpp"

namespace dmd2 {

// out-dir/{config.snapshot.json, checkpoints/, records/, plots/}. Teacher and
// pair artifacts are keyed by their content hash and may live in a shared
// root so that ablation variants reuse them.
struct Layout {
  std::filesystem::path root;
  std::filesystem::path shared;

  explicit Layout(std::filesystem::path run_root, std::filesystem::path shared_root = {});

  std::filesystem::path snapshot() const { return root / "config.snapshot.json"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path records() const { return root / "records"; }
  std::filesystem::path plots() const { return root / "plots"; }
  std::filesystem::path teacher_checkpoint(std::uint64_t teacher_hash) const;
  std::filesystem::path pair_file(std::uint64_t pairs_hash) const;
  std::filesystem::path generator_checkpoint(std::uint64_t seed) const;
  // Generator state at the evaluation row with the lowest FD.
  std::filesystem::path best_generator_checkpoint(std::uint64_t seed) const;
  std::filesystem::path run_record(std::uint64_t seed) const;
};

Checkpoint generator_to_checkpoint(const Generator& gen, std::uint64_t config_hash, std::uint64_t seed);
Generator generator_from_checkpoint(const Checkpoint& ckpt, const NoiseSchedule& schedule);

struct PipelineOptions {
  bool force = false;
  std::ostream* log = nullptr;  // progress lines; null silences them
};

struct TeacherArtifact {
  DenoiserModel model;
  std::filesystem::path path;
  std::uint64_t checkpoint_hash = 0;
  bool reused = false;
};

struct DistillArtifact {
  RunRecord record;
  std::filesystem::path record_path;
  std::filesystem::path checkpoint_path;
  std::filesystem::path best_checkpoint_path;
};

struct EvalRow {
  std::string model;
  int samples = 0;
  EvalResult metrics;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string to_csv() const;
};

class Pipeline {
 public:
  Pipeline(ExperimentConfig config, Layout layout, PipelineOptions options = {});

  const ExperimentConfig& config() const { return config_; }
  const Layout& layout() const { return layout_; }

  // Writes config.snapshot.json; a snapshot with a different hash is an
  // E_CONFIG_MISMATCH unless forced.
  void write_snapshot() const;

  // Reuses a checkpoint with matching hashes unless forced to retrain.
  TeacherArtifact train_teacher();
  // Throws E_MISSING_ARTIFACT naming the command that produces the checkpoint.
  DenoiserModel load_teacher() const;

  PairDataset gen_pairs();
  PairDataset load_pairs() const;

  // Distills with distill.seed replaced by `seed` (default: the config's own).
  DistillArtifact distill(std::optional<std::uint64_t> seed = std::nullopt);

  // Teacher ODE sampler and student on the same evaluation noise. samples = 0
  // is a contract error. The checkpoint must carry this config's hash unless forced.
  EvalReport evaluate(const std::optional<std::filesystem::path>& generator_ckpt, int samples);

  SweepReport sweep();

 private:
  void log(const std::string& line) const;

  ExperimentConfig config_;
  Layout layout_;
  PipelineOptions options_;
};

struct AblationCell {
  std::uint64_t seed = 0;
  std::optional<RunRecord> record;
  std::string error;  // "E_CODE message" when the run failed
};

struct AblationRow {
  std::string variant;
  std::vector<AblationCell> cells;
  double median_fd() const;
  double median_mode_recall() const;
  double median_fluctuation(double window_start = 0.5) const;
  int unstable_count() const;
};

struct AblationReport {
  std::string grid;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& variant) const;
  // Variants ranked by median final FD, best first.
  std::string table() const;
  std::string to_csv() const;
};

// One pipeline per variant under out/ablations/<grid>/<variant>/, sharing the
// teacher and pair artifacts of `out`. Per-run failures are recorded, not thrown.
AblationReport run_ablation(const AblationGrid& grid, const std::filesystem::path& out,
                            const PipelineOptions& options,
                            const std::optional<std::string>& only_variant = std::nullopt);

double median(std::vector<double> values);

}  // namespace dmd2
