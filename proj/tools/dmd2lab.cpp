#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmd2/config.hpp"
#include "dmd2/errors.hpp"
#include "dmd2/hash.hpp"
#include "dmd2/pipeline.hpp"
#include "dmd2/plot.hpp"
#include "dmd2/run_record.hpp"

namespace fs = std::filesystem;
using namespace dmd2;

namespace {

struct Args {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string variant;
  bool force = false;
  std::string checkpoint;
  int samples = -1;
  std::vector<std::string> records;
  std::string metric = "fd";
  std::string x_axis = "iter";
};

// --out wins, then the config's out_dir, then $DMD2LAB_OUT/<name> (default root "runs").
fs::path resolve_out(const Args& a, const std::string& configured, const std::string& name) {
  if (!a.out.empty()) return a.out;
  if (!configured.empty()) return configured;
  const char* env = std::getenv("DMD2LAB_OUT");
  return fs::path(env && *env ? env : "runs") / name;
}

Pipeline make_pipeline(const Args& a) {
  ExperimentConfig cfg = load_experiment_config(a.config);
  const fs::path out = resolve_out(a, cfg.out_dir, cfg.name);
  return Pipeline(std::move(cfg), Layout(out), PipelineOptions{a.force, &std::cout});
}

int cmd_train_teacher(const Args& a) {
  Pipeline p = make_pipeline(a);
  p.write_snapshot();
  const TeacherArtifact t = p.train_teacher();
  std::cout << "config_hash " << hash_hex(p.config().hash()) << "\n"
            << "teacher_hash " << hash_hex(p.config().teacher_hash()) << "\n"
            << "checkpoint_hash " << hash_hex(t.checkpoint_hash) << "\n"
            << "checkpoint " << t.path.string() << "\n";
  return 0;
}

int cmd_gen_pairs(const Args& a) {
  Pipeline p = make_pipeline(a);
  p.write_snapshot();
  const PairDataset ds = p.gen_pairs();
  std::cout << "pairs_hash " << hash_hex(ds.config_hash) << " count " << ds.count() << "\n";
  return 0;
}

int cmd_distill(const Args& a) {
  Pipeline p = make_pipeline(a);
  p.write_snapshot();
  const DistillArtifact d = p.distill(a.seed);
  std::cout << "record " << d.record_path.string() << "\n"
            << "checkpoint " << d.checkpoint_path.string() << "\n";
  return d.record.aborted ? 3 : 0;
}

int cmd_evaluate(const Args& a) {
  Pipeline p = make_pipeline(a);
  std::optional<fs::path> ckpt;
  if (!a.checkpoint.empty()) ckpt = a.checkpoint;
  else if (a.seed) ckpt = p.layout().generator_checkpoint(*a.seed);
  const int samples = a.samples >= 0 ? a.samples : p.config().metrics.samples;
  const EvalReport r = p.evaluate(ckpt, samples);
  std::cout << r.to_csv();
  return 0;
}

int cmd_ablate(const Args& a) {
  const AblationGrid grid = AblationGrid::load(a.config);
  const fs::path out = resolve_out(a, grid.base_config().out_dir, grid.name);
  std::optional<std::string> only;
  if (!a.variant.empty()) only = a.variant;
  const AblationReport r = run_ablation(grid, out, PipelineOptions{a.force, &std::cout}, only);
  for (const auto& row : r.rows)
    for (const auto& c : row.cells)
      if (!c.record) return 3;
  return 0;
}

int cmd_sweep(const Args& a) {
  Pipeline p = make_pipeline(a);
  p.write_snapshot();
  p.sweep();
  return 0;
}

double metric_of(const RunRow& r, const std::string& metric) {
  if (metric == "fd") return r.fd;
  if (metric == "mode_recall") return r.mode_recall;
  if (metric == "diversity") return r.diversity;
  if (metric == "mean_stat") return r.mean_stat;
  if (metric == "dsm_loss") return r.dsm_loss;
  if (metric == "gan_d_loss") return r.gan_d_loss;
  if (metric == "gan_g_loss") return r.gan_g_loss;
  throw ContractError("plot: unknown metric '" + metric + "'");
}

int cmd_plot(const Args& a) {
  if (a.records.empty()) throw ContractError("plot: no run records given");
  std::vector<plot::Series> series;
  for (const auto& path : a.records) {
    const RunRecord rec = RunRecord::load(path);
    double per_iter = 1.0;
    if (a.x_axis == "cost" && rec.rows.size() > 1 && rec.rows.back().iter > 0)
      per_iter = static_cast<double>(rec.cost_units) / rec.rows.back().iter;
    else if (a.x_axis == "wallclock")
      per_iter = 0.0;
    plot::Series s{rec.name.empty() ? fs::path(path).stem().string() : rec.name, {}, {}};
    for (const auto& r : rec.rows) {
      s.x.push_back(a.x_axis == "wallclock" ? r.wallclock : r.iter * per_iter);
      s.y.push_back(metric_of(r, a.metric));
    }
    series.push_back(std::move(s));
  }
  const fs::path out = a.out.empty() ? fs::path("plots") : fs::path(a.out);
  const fs::path file = out / (a.metric + "_vs_" + a.x_axis + ".png");
  const std::string x_label = a.x_axis == "cost" ? "cost units" : a.x_axis == "wallclock" ? "seconds" : "iteration";
  plot::line_plot(file, series, {a.metric + " vs " + x_label, x_label, a.metric, a.metric == "fd"});
  std::cout << "plot " << file.string() << "\n";
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmd2lab: few-step diffusion distillation on Gaussian-mixture targets"};
  app.require_subcommand(1);
  Args a;

  auto add_common = [&](CLI::App* sub, bool seed) {
    sub->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", a.out, "output directory (default: config out_dir or $DMD2LAB_OUT/<name>)");
    sub->add_flag("--force", a.force, "overwrite artifacts produced under a different config");
    if (seed) sub->add_option("--seed", a.seed, "distillation seed override");
  };

  auto* teacher = app.add_subcommand("train-teacher", "train the teacher denoiser");
  add_common(teacher, false);
  auto* pairs = app.add_subcommand("gen-pairs", "generate teacher ODE noise/sample pairs");
  add_common(pairs, false);
  auto* distill = app.add_subcommand("distill", "distill a student generator");
  add_common(distill, true);
  auto* evaluate = app.add_subcommand("evaluate", "evaluate teacher ODE sampler and student");
  add_common(evaluate, true);
  evaluate->add_option("--checkpoint", a.checkpoint, "generator checkpoint (default: out/checkpoints)");
  evaluate->add_option("--samples", a.samples, "evaluation sample count (default: metrics.samples)");
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  add_common(ablate, false);
  ablate->add_option("--variant", a.variant, "run a single variant");
  auto* sweep = app.add_subcommand("sweep-ttur", "equal-budget update-frequency sweep");
  add_common(sweep, false);
  auto* plot_cmd = app.add_subcommand("plot", "overlay run records");
  plot_cmd->add_option("records", a.records, "run record CSV files")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", a.out, "output directory for PNG files");
  plot_cmd->add_option("--metric", a.metric, "fd, mode_recall, diversity, mean_stat, dsm_loss, gan_d_loss, gan_g_loss");
  plot_cmd->add_option("--x", a.x_axis, "iter, cost or wallclock")
      ->check(CLI::IsMember({"iter", "cost", "wallclock"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: code=E_USAGE " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (teacher->parsed()) return cmd_train_teacher(a);
    if (pairs->parsed()) return cmd_gen_pairs(a);
    if (distill->parsed()) return cmd_distill(a);
    if (evaluate->parsed()) return cmd_evaluate(a);
    if (ablate->parsed()) return cmd_ablate(a);
    if (sweep->parsed()) return cmd_sweep(a);
    if (plot_cmd->parsed()) return cmd_plot(a);
  } catch (const Error& e) {
    std::cerr << "error: code=" << code_name(e.code()) << " " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: code=E_INTERNAL " << one_line(e.what()) << "\n";
    return 1;
  }
  return 1;
}
