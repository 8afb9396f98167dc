#include "dmd2/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "dmd2/binary_io.hpp"
#include "dmd2/checkpoint.hpp"
#include "dmd2/hash.hpp"
#include "dmd2/metrics.hpp"
#include "dmd2/plot.hpp"

namespace dmd2 {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  binio::write_file(path.string(), std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string seed_tag(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

double fluctuation(const RunRecord& rec, double window_start) {
  const auto trace = rec.mean_stats(window_start);
  if (trace.size() < 10) return nan();
  return mean_statistic_trace(trace).fluctuation_std;
}

plot::Series fd_series(const std::string& label, const RunRecord& rec, double x_scale = 1.0) {
  plot::Series s{label, {}, {}};
  for (const auto& r : rec.rows) {
    s.x.push_back(r.iter * x_scale);
    s.y.push_back(r.fd);
  }
  return s;
}

plot::Series mean_series(const std::string& label, const RunRecord& rec) {
  plot::Series s{label, {}, {}};
  for (const auto& r : rec.rows) {
    s.x.push_back(r.iter);
    s.y.push_back(r.mean_stat);
  }
  return s;
}

}  // namespace

Layout::Layout(fs::path run_root, fs::path shared_root)
    : root(std::move(run_root)), shared(shared_root.empty() ? root : std::move(shared_root)) {}

fs::path Layout::teacher_checkpoint(std::uint64_t teacher_hash) const {
  return shared / "checkpoints" / ("teacher-" + hash_hex(teacher_hash) + ".ckpt");
}

fs::path Layout::pair_file(std::uint64_t pairs_hash) const {
  return shared / "checkpoints" / ("pairs-" + hash_hex(pairs_hash) + ".bin");
}

fs::path Layout::generator_checkpoint(std::uint64_t seed) const {
  return checkpoints() / ("generator-" + seed_tag(seed) + ".ckpt");
}

fs::path Layout::best_generator_checkpoint(std::uint64_t seed) const {
  return checkpoints() / ("generator-" + seed_tag(seed) + ".best.ckpt");
}

fs::path Layout::run_record(std::uint64_t seed) const { return records() / (seed_tag(seed) + ".csv"); }

Checkpoint generator_to_checkpoint(const Generator& gen, std::uint64_t config_hash, std::uint64_t seed) {
  Checkpoint ckpt = gen.backbone().to_checkpoint(config_hash);
  ckpt.meta["kind"] = "generator";
  ckpt.meta["mode"] = gen.mode() == GeneratorMode::kOneStep ? "one-step" : "multi-step";
  ckpt.meta["schedule_steps"] = gen.schedule_steps();
  ckpt.meta["seed"] = seed;
  return ckpt;
}

Generator generator_from_checkpoint(const Checkpoint& ckpt, const NoiseSchedule& schedule) {
  if (ckpt.meta.value("kind", "") != "generator")
    throw IoError("checkpoint does not hold a generator (kind=" + ckpt.meta.value("kind", "?") + ")");
  DenoiserModel backbone = DenoiserModel::from_checkpoint(ckpt, schedule);
  if (ckpt.meta.at("mode") == "one-step") return Generator::one_step(std::move(backbone));
  return Generator::multi_step(std::move(backbone), ckpt.meta.at("schedule_steps").get<std::vector<int>>());
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "model,samples,fd,mode_recall,diversity,mean_stat\n";
  os << std::setprecision(10);
  for (const auto& r : rows)
    os << r.model << ',' << r.samples << ',' << r.metrics.fd << ',' << r.metrics.mode_recall << ','
       << r.metrics.diversity << ',' << r.metrics.mean_stat << "\n";
  return os.str();
}

Pipeline::Pipeline(ExperimentConfig config, Layout layout, PipelineOptions options)
    : config_(std::move(config)), layout_(std::move(layout)), options_(options) {}

void Pipeline::log(const std::string& line) const {
  if (options_.log) *options_.log << line << std::endl;
}

void Pipeline::write_snapshot() const {
  const std::uint64_t h = config_.hash();
  if (fs::exists(layout_.snapshot()) && !options_.force) {
    const auto existing = read_json_file(layout_.snapshot());
    const std::string old_hash = existing.value("config_hash", "");
    if (old_hash != hash_hex(h))
      throw ConfigError(ErrorCode::kConfigMismatch,
                        "output directory '" + layout_.root.string() + "' holds config " + old_hash +
                            ", current config is " + hash_hex(h) + "; use --force or another --out");
  }
  nlohmann::json snap = {{"config_hash", hash_hex(h)},
                         {"teacher_hash", hash_hex(config_.teacher_hash())},
                         {"pairs_hash", hash_hex(config_.pairs_hash())},
                         {"config", config_.to_json()}};
  write_text(layout_.snapshot(), snap.dump(2) + "\n");
}

TeacherArtifact Pipeline::train_teacher() {
  const std::uint64_t th = config_.teacher_hash();
  const fs::path path = layout_.teacher_checkpoint(th);
  const NoiseSchedule schedule = config_.noise_schedule();
  if (fs::exists(path) && !options_.force) {
    const Checkpoint ckpt = load_checkpoint(path.string());
    if (ckpt.config_hash == th) {
      log("teacher: reusing " + path.string() + " (checkpoint " + hash_hex(checkpoint_hash(ckpt)) + ")");
      return {DenoiserModel::from_checkpoint(ckpt, schedule), path, checkpoint_hash(ckpt), true};
    }
  }
  log("teacher: training " + std::to_string(config_.teacher.steps) + " steps");
  TeacherResult res = ::dmd2::train_teacher(config_.teacher_config(), config_.target_spec(), schedule);
  Checkpoint ckpt = res.model.to_checkpoint(th);
  if (!res.log.empty()) ckpt.meta["final_loss"] = res.log.back().loss;
  ckpt.meta["steps"] = config_.teacher.steps;
  save_checkpoint(path.string(), ckpt);
  const std::uint64_t ch = checkpoint_hash(ckpt);
  log("teacher: saved " + path.string() + " config " + hash_hex(th) + " checkpoint " + hash_hex(ch));
  return {std::move(res.model), path, ch, false};
}

DenoiserModel Pipeline::load_teacher() const {
  const std::uint64_t th = config_.teacher_hash();
  const fs::path path = layout_.teacher_checkpoint(th);
  if (!fs::exists(path))
    throw Error(ErrorCode::kMissingArtifact,
                "teacher checkpoint " + path.string() +
                    " not found; run 'dmd2lab train-teacher' with this config and --out first");
  const Checkpoint ckpt = load_checkpoint(path.string());
  if (ckpt.config_hash != th)
    throw ConfigError(ErrorCode::kConfigMismatch, "teacher checkpoint " + path.string() +
                                                      " was trained for config " + hash_hex(ckpt.config_hash));
  return DenoiserModel::from_checkpoint(ckpt, config_.noise_schedule());
}

PairDataset Pipeline::gen_pairs() {
  const std::uint64_t ph = config_.pairs_hash();
  const fs::path path = layout_.pair_file(ph);
  if (fs::exists(path) && !options_.force) {
    PairDataset ds = ::dmd2::load_pairs(path.string());
    if (ds.config_hash == ph) {
      log("pairs: reusing " + path.string());
      return ds;
    }
  }
  const DenoiserModel teacher = load_teacher();
  PairOptions po;
  po.count = config_.pairs.count;
  po.seed = config_.pairs.seed;
  po.ode_steps = config_.pairs.ode_steps;
  po.range = config_.sampler_range();
  po.config_hash = ph;
  po.threads = config_.pairs.threads;
  log("pairs: generating " + std::to_string(po.count) + " teacher ODE pairs");
  PairDataset ds = generate_pairs(teacher, config_.noise_schedule(), po);
  save_pairs(path.string(), ds);
  log("pairs: saved " + path.string());
  return ds;
}

PairDataset Pipeline::load_pairs() const {
  const std::uint64_t ph = config_.pairs_hash();
  const fs::path path = layout_.pair_file(ph);
  if (!fs::exists(path))
    throw Error(ErrorCode::kMissingArtifact,
                "regression needs the pair dataset " + path.string() +
                    "; run 'dmd2lab gen-pairs' with this config and --out first");
  PairDataset ds = ::dmd2::load_pairs(path.string());
  if (ds.config_hash != ph)
    throw ConfigError(ErrorCode::kConfigMismatch, "pair dataset " + path.string() + " belongs to config " +
                                                      hash_hex(ds.config_hash));
  return ds;
}

DistillArtifact Pipeline::distill(std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = config_;
  if (seed) cfg.distill.seed = *seed;
  const DenoiserModel teacher = load_teacher();
  std::optional<PairDataset> pairs;
  if (cfg.distill.regression) pairs = load_pairs();
  log("distill: " + cfg.name + " seed " + std::to_string(cfg.distill.seed) + ", " +
      std::to_string(cfg.distill.iterations) + " iterations, ttur " + std::to_string(cfg.distill.ttur_ratio));
  const std::uint64_t h = cfg.hash();
  const std::uint64_t seed_value = cfg.distill.seed;
  std::optional<Checkpoint> best;
  double best_fd = std::numeric_limits<double>::infinity();
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const RunRow& row, const Generator& gen) {
    if (!(row.fd < best_fd)) return;
    best_fd = row.fd;
    best = generator_to_checkpoint(gen, h, seed_value);
    best->meta["iter"] = row.iter;
    best->meta["fd"] = row.fd;
  };
  DistillResult res = ttur_train(cfg.distill, cfg.metrics, teacher, cfg.target_spec(),
                                 pairs ? &*pairs : nullptr, hooks);
  res.record.name = cfg.name + "-" + seed_tag(cfg.distill.seed);
  res.record.config = cfg.to_json();
  res.record.config_hash = cfg.hash();
  DistillArtifact art;
  art.record_path = layout_.run_record(cfg.distill.seed);
  art.checkpoint_path = layout_.generator_checkpoint(cfg.distill.seed);
  art.best_checkpoint_path = layout_.best_generator_checkpoint(cfg.distill.seed);
  res.record.save(art.record_path.string());
  if (best) save_checkpoint(art.best_checkpoint_path.string(), *best);
  save_checkpoint(art.checkpoint_path.string(),
                  generator_to_checkpoint(res.generator, cfg.hash(), cfg.distill.seed));
  std::ostringstream msg;
  msg << "distill: final fd " << res.record.final_fd() << ", mode recall "
      << res.record.final_row().mode_recall << (res.record.unstable ? " (unstable)" : "") << " -> "
      << art.record_path.string();
  log(msg.str());
  art.record = std::move(res.record);
  return art;
}

EvalReport Pipeline::evaluate(const std::optional<fs::path>& generator_ckpt, int samples) {
  if (samples <= 0) throw ContractError("evaluate: sample count must be positive, got " + std::to_string(samples));
  const DenoiserModel teacher = load_teacher();
  const NoiseSchedule schedule = config_.noise_schedule();
  const GmmSpec target = config_.target_spec();
  EvalConfig ev = config_.metrics;
  ev.samples = samples;

  EvalReport report;
  Rng noise_rng(mix_seed(ev.seed, 0));
  const Matrix z = noise_rng.normal_matrix(samples, target.dim());
  const Matrix teacher_samples = sample_ode(teacher, schedule, z, config_.teacher.ode_steps, config_.sampler_range());
  report.rows.push_back({"teacher-ode" + std::to_string(config_.teacher.ode_steps), samples,
                         evaluate_samples(teacher_samples, target, ev)});

  const fs::path path = generator_ckpt ? *generator_ckpt : layout_.generator_checkpoint(config_.distill.seed);
  if (!fs::exists(path))
    throw Error(ErrorCode::kMissingArtifact,
                "generator checkpoint " + path.string() + " not found; run 'dmd2lab distill' first");
  const Checkpoint ckpt = load_checkpoint(path.string());
  ExperimentConfig cfg = config_;
  if (ckpt.meta.contains("seed")) cfg.distill.seed = ckpt.meta.at("seed").get<std::uint64_t>();
  if (ckpt.config_hash != cfg.hash() && !options_.force)
    throw ConfigError(ErrorCode::kConfigMismatch, "checkpoint " + path.string() + " was produced by config " +
                                                      hash_hex(ckpt.config_hash) + ", not " + hash_hex(cfg.hash()) +
                                                      " (use --force to evaluate anyway)");
  const Generator gen = generator_from_checkpoint(ckpt, schedule);
  report.rows.push_back({"student", samples, evaluate_generator(gen, target, ev)});
  write_text(layout_.records() / "eval.csv", report.to_csv());
  return report;
}

SweepReport Pipeline::sweep() {
  const DenoiserModel teacher = load_teacher();
  log("sweep: ratios with budget " + std::to_string(config_.sweep.budget_units) + " cost units");
  SweepReport rep = update_frequency_sweep(config_.distill, config_.metrics, teacher, config_.target_spec(),
                                           config_.sweep.ratios, config_.sweep.budget_units,
                                           config_.sweep.include_async, config_.sweep.async_lr_factor);
  std::vector<plot::Series> series;
  for (auto& e : rep.entries) {
    e.record.config = config_.to_json();
    e.record.config["distill"]["ttur_ratio"] = e.ttur_ratio;
    e.record.config["distill"]["fake_lr"] = e.fake_lr;
    e.record.config["distill"]["iterations"] = e.iterations;
    e.record.config_hash = fnv1a(e.record.config.dump());
    e.record.save((layout_.root / "sweep" / (e.name + ".csv")).string());
    series.push_back(fd_series(e.name, e.record, 1.0 + e.ttur_ratio));
  }
  write_text(layout_.root / "sweep" / "table.txt", rep.table());
  plot::line_plot(layout_.plots() / "sweep_fd.png", series,
                  {"update frequency sweep", "cost units (updates)", "FD", true});
  log(rep.table());
  return rep;
}

double median(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }), values.end());
  if (values.empty()) return nan();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double AblationRow::median_fd() const {
  std::vector<double> v;
  for (const auto& c : cells)
    v.push_back(c.record && !c.record->rows.empty() ? c.record->final_fd() : std::numeric_limits<double>::infinity());
  return median(v);
}

double AblationRow::median_mode_recall() const {
  std::vector<double> v;
  for (const auto& c : cells) v.push_back(c.record && !c.record->rows.empty() ? c.record->final_row().mode_recall : 0.0);
  return median(v);
}

double AblationRow::median_fluctuation(double window_start) const {
  std::vector<double> v;
  for (const auto& c : cells)
    if (c.record) v.push_back(fluctuation(*c.record, window_start));
  return median(v);
}

int AblationRow::unstable_count() const {
  int n = 0;
  for (const auto& c : cells) n += !c.record || c.record->unstable;
  return n;
}

const AblationRow& AblationReport::row(const std::string& variant) const {
  for (const auto& r : rows)
    if (r.variant == variant) return r;
  throw ContractError("ablation report has no variant '" + variant + "'");
}

std::string AblationReport::table() const {
  std::vector<const AblationRow*> order;
  for (const auto& r : rows) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(),
                   [](const AblationRow* a, const AblationRow* b) { return a->median_fd() < b->median_fd(); });
  std::ostringstream os;
  os << "ablation " << grid << " (ranked by median final FD)\n";
  os << std::left << std::setw(24) << "variant" << std::setw(12) << "median_fd" << std::setw(12) << "recall"
     << std::setw(12) << "fluct_std" << std::setw(10) << "unstable" << "per-seed fd\n";
  for (const AblationRow* r : order) {
    os << std::left << std::setw(24) << r->variant << std::setw(12) << std::setprecision(5) << r->median_fd()
       << std::setw(12) << r->median_mode_recall() << std::setw(12) << r->median_fluctuation() << std::setw(10)
       << r->unstable_count();
    for (const auto& c : r->cells) {
      if (c.record) os << c.record->final_fd() << ' ';
      else os << "[" << c.error << "] ";
    }
    os << "\n";
  }
  return os.str();
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << "variant,seed,final_fd,mode_recall,fluctuation_std,status,error\n" << std::setprecision(10);
  for (const auto& r : rows)
    for (const auto& c : r.cells) {
      os << r.variant << ',' << c.seed << ',';
      if (c.record) {
        os << c.record->final_fd() << ',' << c.record->final_row().mode_recall << ','
           << fluctuation(*c.record, 0.5) << ',' << (c.record->unstable ? "unstable" : "stable") << ",";
      } else {
        os << ",,,failed," << c.error;
      }
      os << "\n";
    }
  return os.str();
}

AblationReport run_ablation(const AblationGrid& grid, const fs::path& out, const PipelineOptions& options,
                            const std::optional<std::string>& only_variant) {
  AblationReport report;
  report.grid = grid.name;
  const fs::path grid_root = out / "ablations" / grid.name;
  std::vector<const AblationVariant*> selected;
  if (only_variant) selected.push_back(&grid.variant(*only_variant));
  else
    for (const auto& v : grid.variants) selected.push_back(&v);

  for (const AblationVariant* v : selected) {
    AblationRow row;
    row.variant = v->name;
    const ExperimentConfig cfg = grid.variant_config(*v);
    Pipeline p(cfg, Layout(grid_root / v->name, out), options);
    for (std::uint64_t seed : grid.seeds) {
      AblationCell cell;
      cell.seed = seed;
      try {
        p.write_snapshot();
        p.train_teacher();
        if (cfg.distill.regression) p.gen_pairs();
        cell.record = p.distill(seed).record;
      } catch (const Error& e) {
        cell.error = std::string(code_name(e.code())) + " " + e.what();
        if (options.log) *options.log << "ablation: variant " << v->name << " seed " << seed << " failed: " << cell.error << std::endl;
      }
      row.cells.push_back(std::move(cell));
    }
    report.rows.push_back(std::move(row));
  }

  write_text(grid_root / "table.txt", report.table());
  write_text(grid_root / "table.csv", report.to_csv());
  std::vector<plot::Series> fd, ms;
  for (const auto& r : report.rows)
    for (const auto& c : r.cells)
      if (c.record) {
        fd.push_back(fd_series(r.variant, *c.record));
        ms.push_back(mean_series(r.variant, *c.record));
        break;
      }
  if (!fd.empty()) {
    plot::line_plot(grid_root / "plots" / "fd.png", fd, {grid.name + " FD", "iteration", "FD", true});
    plot::line_plot(grid_root / "plots" / "mean_stat.png", ms, {grid.name + " mean statistic", "iteration", "mean x", false});
  }
  if (options.log) *options.log << report.table();
  return report;
}

}  // namespace dmd2
