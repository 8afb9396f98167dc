#include "dmd2/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dmd2/hash.hpp"

namespace dmd2 {

namespace {

using nlohmann::json;

[[noreturn]] void fail(ErrorCode code, const std::string& msg) { throw ConfigError(code, msg); }

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Strict view of one JSON object: every read is recorded so that leftover
// keys can be reported as unknown.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      fail(ErrorCode::kConfigInvalid, "'" + (path_.empty() ? "<root>" : path_) + "' must be an object");
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) fail(ErrorCode::kConfigMissingKey, "missing key '" + join(path_, key) + "'");
    return *it;
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  int get_int(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_integer()) bad_type(key, "an integer");
    return v.get<int>();
  }
  std::uint64_t get_u64(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      bad_type(key, "a non-negative integer");
    return v.get<std::uint64_t>();
  }
  double get_double(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) bad_type(key, "a number");
    return v.get<double>();
  }
  bool get_bool(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_boolean()) bad_type(key, "a boolean");
    return v.get<bool>();
  }
  std::string get_string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) bad_type(key, "a string");
    return v.get<std::string>();
  }
  template <class T>
  std::vector<T> get_array(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) bad_type(key, "an array");
    try {
      return v.get<std::vector<T>>();
    } catch (const json::exception&) {
      bad_type(key, "an array of the expected element type");
    }
  }
  Obj child(const std::string& key) { return Obj(raw(key), join(path_, key)); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key()))
        fail(ErrorCode::kConfigUnknownKey, "unknown key '" + join(path_, it.key()) + "'");
  }

  const std::string& path() const { return path_; }

 private:
  [[noreturn]] void bad_type(const std::string& key, const char* expected) const {
    fail(ErrorCode::kConfigInvalid, "key '" + join(path_, key) + "' must be " + expected);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// Type compatibility against a canonical default value. Integers are accepted
// where reals are expected, not the other way round.
bool same_kind(const json& def, const json& v) {
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_array()) return v.is_array();
  return def.type() == v.type();
}

std::string kind_name(const json& def) {
  if (def.is_number_float()) return "a number";
  if (def.is_number_unsigned()) return "a non-negative integer";
  if (def.is_number_integer()) return "an integer";
  if (def.is_array()) return "an array";
  return std::string("a ") + def.type_name();
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(ErrorCode::kConfigInvalid, msg);
}

json target_to_json(const TargetConfig& t) {
  if (t.type == "ring")
    return {{"type", "ring"}, {"modes", t.modes}, {"radius", t.radius}, {"std", t.std_dev}};
  json means = json::array(), covs = json::array();
  for (const auto& m : t.gmm.means) means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
  for (const auto& c : t.gmm.covariances) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
      std::vector<double> row(c.cols());
      for (Eigen::Index k = 0; k < c.cols(); ++k) row[k] = c(r, k);
      rows.push_back(row);
    }
    covs.push_back(rows);
  }
  return {{"type", "gmm"}, {"weights", t.gmm.weights}, {"means", means}, {"covariances", covs}};
}

TargetConfig target_from_json(Obj o) {
  TargetConfig t;
  t.type = o.get_string("type");
  if (t.type == "ring") {
    t.modes = o.get_int("modes");
    t.radius = o.get_double("radius");
    t.std_dev = o.get_double("std");
    require(t.modes >= 1, "target.modes must be >= 1");
    require(t.radius >= 0.0 && t.std_dev > 0.0, "target.radius must be >= 0 and target.std > 0");
  } else if (t.type == "gmm") {
    t.gmm.weights = o.get_array<double>("weights");
    const auto means = o.get_array<std::vector<double>>("means");
    const auto covs = o.get_array<std::vector<std::vector<double>>>("covariances");
    require(means.size() == t.gmm.weights.size() && covs.size() == t.gmm.weights.size(),
            "target: weights, means and covariances must have the same length");
    for (std::size_t k = 0; k < means.size(); ++k) {
      const auto d = static_cast<Eigen::Index>(means[k].size());
      t.gmm.means.push_back(Eigen::Map<const Vector>(means[k].data(), d));
      require(static_cast<Eigen::Index>(covs[k].size()) == d,
              "target.covariances[" + std::to_string(k) + "] has the wrong size");
      SquareMatrix c(d, d);
      for (Eigen::Index r = 0; r < d; ++r) {
        require(static_cast<Eigen::Index>(covs[k][r].size()) == d,
                "target.covariances[" + std::to_string(k) + "] is not square");
        for (Eigen::Index q = 0; q < d; ++q) c(r, q) = covs[k][r][q];
      }
      t.gmm.covariances.push_back(c);
    }
    try {
      t.gmm.validate();
    } catch (const Error& e) {
      fail(ErrorCode::kConfigInvalid, std::string("target: ") + e.what());
    }
  } else {
    fail(ErrorCode::kConfigInvalid, "target.type must be \"ring\" or \"gmm\", got \"" + t.type + "\"");
  }
  o.finish();
  return t;
}

json with_hash_scope(const ExperimentConfig& c, bool with_pairs) {
  json all = c.to_json();
  json scoped = {{"target", all["target"]},
                 {"schedule", all["schedule"]},
                 {"model", all["model"]},
                 {"teacher", all["teacher"]}};
  if (with_pairs) scoped["pairs"] = all["pairs"];
  return scoped;
}

}  // namespace

GmmSpec TargetConfig::build() const {
  if (type == "ring") return GmmSpec::ring(modes, radius, std_dev);
  gmm.validate();
  return gmm;
}

NoiseSchedule ScheduleConfig::build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }

json ExperimentConfig::to_json() const {
  json model_j = {{"hidden", model.hidden}, {"time_frequencies", model.time_frequencies}};
  model_j["data_scale"] = model.data_scale > 0.0 ? json(model.data_scale) : json("auto");
  json distill_j = train_config_to_json(distill);
  return {{"schema_version", schema_version},
          {"name", name},
          {"target", target_to_json(target)},
          {"schedule",
           {{"steps", schedule.steps}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}}},
          {"model", model_j},
          {"teacher",
           {{"steps", teacher.steps},
            {"batch_size", teacher.batch_size},
            {"lr", teacher.lr},
            {"weight_decay", teacher.weight_decay},
            {"cosine_decay", teacher.cosine_decay},
            {"t_lo_frac", teacher.t_lo_frac},
            {"t_hi_frac", teacher.t_hi_frac},
            {"seed", teacher.seed},
            {"ode_steps", teacher.ode_steps}}},
          {"pairs",
           {{"count", pairs.count},
            {"seed", pairs.seed},
            {"ode_steps", pairs.ode_steps},
            {"threads", pairs.threads}}},
          {"distill", distill_j},
          {"metrics", eval_config_to_json(metrics)},
          {"sweep",
           {{"ratios", sweep.ratios},
            {"include_async", sweep.include_async},
            {"async_lr_factor", sweep.async_lr_factor},
            {"budget_units", sweep.budget_units}}},
          {"seeds", seeds},
          {"out_dir", out_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Obj root(j, "");
  c.schema_version = root.get_int("schema_version");
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError(ErrorCode::kVersionMismatch,
                      "schema_version " + std::to_string(c.schema_version) + " is not supported (expected " +
                          std::to_string(kConfigSchemaVersion) + ")");
  c.name = root.get_string("name");
  require(!c.name.empty(), "name must be non-empty");
  c.target = target_from_json(root.child("target"));

  {
    Obj o = root.child("schedule");
    c.schedule.steps = o.get_int("steps");
    c.schedule.beta_start = o.get_double("beta_start");
    c.schedule.beta_end = o.get_double("beta_end");
    o.finish();
    require(c.schedule.steps >= 2, "schedule.steps must be >= 2");
    require(c.schedule.beta_start > 0.0 && c.schedule.beta_start <= c.schedule.beta_end &&
                c.schedule.beta_end < 1.0,
            "schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  {
    Obj o = root.child("model");
    c.model.hidden = o.get_array<std::size_t>("hidden");
    c.model.time_frequencies = o.get_int("time_frequencies");
    const json& ds = o.raw("data_scale");
    if (ds.is_string() && ds.get<std::string>() == "auto")
      c.model.data_scale = 0.0;
    else if (ds.is_number() && ds.get<double>() > 0.0)
      c.model.data_scale = ds.get<double>();
    else
      fail(ErrorCode::kConfigInvalid, "key 'model.data_scale' must be \"auto\" or a positive number");
    o.finish();
    require(!c.model.hidden.empty(), "model.hidden must list at least one layer");
    for (auto w : c.model.hidden) require(w >= 1, "model.hidden widths must be >= 1");
    require(c.model.time_frequencies >= 1, "model.time_frequencies must be >= 1");
  }
  {
    Obj o = root.child("teacher");
    c.teacher.steps = o.get_int("steps");
    c.teacher.batch_size = o.get_int("batch_size");
    c.teacher.lr = o.get_double("lr");
    c.teacher.weight_decay = o.get_double("weight_decay");
    c.teacher.cosine_decay = o.get_bool("cosine_decay");
    c.teacher.t_lo_frac = o.get_double("t_lo_frac");
    c.teacher.t_hi_frac = o.get_double("t_hi_frac");
    c.teacher.seed = o.get_u64("seed");
    c.teacher.ode_steps = o.get_int("ode_steps");
    o.finish();
    require(c.teacher.steps >= 0 && c.teacher.batch_size >= 1, "teacher.steps/batch_size out of range");
    require(c.teacher.lr > 0.0, "teacher.lr must be positive");
    require(c.teacher.ode_steps >= 1, "teacher.ode_steps must be >= 1");
  }
  {
    Obj o = root.child("pairs");
    c.pairs.count = o.get_int("count");
    c.pairs.seed = o.get_u64("seed");
    c.pairs.ode_steps = o.get_int("ode_steps");
    c.pairs.threads = o.get_int("threads");
    o.finish();
    require(c.pairs.count >= 1 && c.pairs.ode_steps >= 1 && c.pairs.threads >= 1,
            "pairs.count, pairs.ode_steps and pairs.threads must be >= 1");
  }
  {
    const json& dj = root.raw("distill");
    Obj o(dj, "distill");
    const json defaults = train_config_to_json(TrainConfig{});
    for (auto it = defaults.begin(); it != defaults.end(); ++it) {
      const json& v = o.raw(it.key());
      if (!same_kind(*it, v))
        fail(ErrorCode::kConfigInvalid,
             "key 'distill." + it.key() + "' must be " + kind_name(*it) + ", got " + v.type_name());
    }
    o.finish();
    try {
      c.distill = train_config_from_json(dj);
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfigInvalid, std::string("distill: ") + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::kConfigInvalid, std::string("distill: ") + e.what());
    }
  }
  {
    Obj o = root.child("metrics");
    c.metrics.every = o.get_int("every");
    c.metrics.samples = o.get_int("samples");
    c.metrics.mode_radius = o.get_double("mode_radius");
    c.metrics.diversity_groups = o.get_int("diversity_groups");
    c.metrics.diversity_group_size = o.get_int("diversity_group_size");
    c.metrics.seed = o.get_u64("seed");
    o.finish();
    require(c.metrics.every >= 1, "metrics.every must be >= 1");
    require(c.metrics.samples >= 2, "metrics.samples must be >= 2");
    require(c.metrics.mode_radius > 0.0, "metrics.mode_radius must be positive");
  }
  {
    Obj o = root.child("sweep");
    c.sweep.ratios = o.get_array<int>("ratios");
    c.sweep.include_async = o.get_bool("include_async");
    c.sweep.async_lr_factor = o.get_double("async_lr_factor");
    c.sweep.budget_units = o.get_u64("budget_units");
    o.finish();
    require(!c.sweep.ratios.empty(), "sweep.ratios must be non-empty");
    for (int r : c.sweep.ratios) require(r >= 1, "sweep.ratios entries must be >= 1");
  }
  c.seeds = root.get_array<std::uint64_t>("seeds");
  require(!c.seeds.empty(), "seeds must be non-empty");
  c.out_dir = root.get_string("out_dir");
  root.finish();

  try {
    c.distill.validate();
  } catch (const ContractError& e) {
    fail(ErrorCode::kConfigInvalid, e.what());
  }
  return c;
}

std::uint64_t ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("out_dir");  // where artifacts live does not change what they are
  return fnv1a(j.dump());
}
std::uint64_t ExperimentConfig::teacher_hash() const { return fnv1a(with_hash_scope(*this, false).dump()); }
std::uint64_t ExperimentConfig::pairs_hash() const { return fnv1a(with_hash_scope(*this, true).dump()); }

DenoiserArch ExperimentConfig::arch() const {
  DenoiserArch a;
  const GmmSpec g = target_spec();
  a.dim = g.dim();
  a.hidden = model.hidden;
  a.time_frequencies = model.time_frequencies;
  a.data_scale = model.data_scale > 0.0 ? model.data_scale : g.scale();
  return a;
}

TeacherConfig ExperimentConfig::teacher_config() const {
  TeacherConfig t;
  t.arch = arch();
  t.steps = teacher.steps;
  t.batch_size = teacher.batch_size;
  t.lr = teacher.lr;
  t.weight_decay = teacher.weight_decay;
  t.cosine_decay = teacher.cosine_decay;
  t.t_lo_frac = teacher.t_lo_frac;
  t.t_hi_frac = teacher.t_hi_frac;
  t.seed = teacher.seed;
  return t;
}

TimestepRange ExperimentConfig::sampler_range() const {
  return trained_range(noise_schedule(), teacher.t_lo_frac, teacher.t_hi_frac);
}

json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (auto p = msg.find("parse error"); p != std::string::npos) msg = msg.substr(p);
    fail(ErrorCode::kConfigParse,
         source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path.string());
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return ExperimentConfig::from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(e.code(), path.string() + ": " + e.what());
  }
}

json merge_patch(json base, const json& patch) {
  base.merge_patch(patch);
  return base;
}

ExperimentConfig AblationGrid::variant_config(const AblationVariant& v) const {
  try {
    return ExperimentConfig::from_json(merge_patch(base, v.patch));
  } catch (const ConfigError& e) {
    throw ConfigError(e.code(), "variant '" + v.name + "': " + e.what());
  }
}

const AblationVariant& AblationGrid::variant(const std::string& variant_name) const {
  for (const auto& v : variants)
    if (v.name == variant_name) return v;
  fail(ErrorCode::kConfigInvalid, "grid '" + name + "' has no variant named '" + variant_name + "'");
}

AblationGrid AblationGrid::from_json(const json& j, const std::filesystem::path& dir) {
  AblationGrid g;
  Obj root(j, "");
  const int version = root.get_int("schema_version");
  if (version != kConfigSchemaVersion)
    throw ConfigError(ErrorCode::kVersionMismatch,
                      "grid schema_version " + std::to_string(version) + " is not supported");
  const std::string kind = root.get_string("kind");
  require(kind == "ablation", "grid kind must be \"ablation\"");
  g.name = root.get_string("name");
  const json& base = root.raw("base");
  if (base.is_string()) {
    const auto base_path = dir / base.get<std::string>();
    g.base = load_experiment_config(base_path).to_json();
  } else {
    g.base = ExperimentConfig::from_json(base).to_json();
  }
  g.seeds = root.get_array<std::uint64_t>("seeds");
  require(!g.seeds.empty(), "grid seeds must be non-empty");
  const json& variants = root.raw("variants");
  require(variants.is_array(), "grid variants must be an array");
  require(!variants.empty(), "grid '" + g.name + "' has no variants");
  std::set<std::string> names;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    Obj v(variants[i], "variants[" + std::to_string(i) + "]");
    AblationVariant av;
    av.name = v.get_string("name");
    av.patch = v.raw("patch");
    v.finish();
    require(!av.name.empty(), "variant names must be non-empty");
    require(names.insert(av.name).second, "duplicate variant name '" + av.name + "'");
    require(av.patch.is_object(), "variant '" + av.name + "': patch must be an object");
    g.variants.push_back(std::move(av));
  }
  root.finish();
  for (const auto& v : g.variants) g.variant_config(v);
  return g;
}

AblationGrid AblationGrid::load(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return from_json(j, path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace dmd2
