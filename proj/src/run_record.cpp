#include "dmd2/run_record.hpp"

#include <cinttypes>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>

#include "dmd2/binary_io.hpp"
#include "dmd2/errors.hpp"
#include "dmd2/hash.hpp"

namespace dmd2 {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    // stod rejects "nan"/"inf" spellings on some platforms; accept the printf ones.
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw IoError("run record: bad number '" + s + "' on line " + std::to_string(line));
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

}  // namespace

void RunRecord::mark_unstable(int iter, const std::string& reason) {
  if (unstable) return;
  unstable = true;
  unstable_iter = iter;
  unstable_reason = reason;
}

const RunRow& RunRecord::final_row() const {
  if (rows.empty()) throw ContractError("run record '" + name + "' has no rows");
  return rows.back();
}

std::vector<double> RunRecord::mean_stats(double window_start) const {
  std::vector<double> out;
  if (rows.empty()) return out;
  const int last = rows.back().iter;
  for (const auto& r : rows)
    if (r.iter >= window_start * last) out.push_back(r.mean_stat);
  return out;
}

std::string RunRecord::to_csv(bool include_wallclock) const {
  std::ostringstream os;
  os << "# dmd2 run record v1\n";
  os << "# name: " << name << "\n";
  os << "# config_hash: " << hash_hex(config_hash) << "\n";
  os << "# schedule:";
  for (std::size_t i = 0; i < schedule.size(); ++i) os << (i ? "," : " ") << schedule[i];
  os << "\n";
  if (unstable)
    os << "# status: unstable at iter " << unstable_iter << " (" << unstable_reason << ")\n";
  else
    os << "# status: stable\n";
  os << "# aborted: " << (aborted ? "yes" : "no") << "\n";
  os << "# updates: generator=" << generator_updates << " fake=" << fake_updates
     << " cost_units=" << cost_units << "\n";
  os << "# config: " << config.dump() << "\n";
  os << kRunRecordColumns << "\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << fmt(r.fd) << ',' << fmt(r.mode_recall) << ',' << fmt(r.diversity) << ','
       << fmt(r.mean_stat) << ',' << fmt(r.dsm_loss) << ',' << fmt(r.gan_d_loss) << ','
       << fmt(r.gan_g_loss) << ',' << (include_wallclock ? fmt(r.wallclock) : "0") << "\n";
  }
  return os.str();
}

RunRecord RunRecord::from_csv(const std::string& text) {
  RunRecord rec;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  auto value_after = [](const std::string& l, const std::string& key) -> std::optional<std::string> {
    if (l.rfind(key, 0) != 0) return std::nullopt;
    return l.substr(key.size());
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (auto v = value_after(line, "# name: ")) rec.name = *v;
      else if (auto v = value_after(line, "# config_hash: ")) rec.config_hash = std::stoull(*v, nullptr, 16);
      else if (auto v = value_after(line, "# schedule: "))
        for (const auto& s : split(*v, ',')) rec.schedule.push_back(std::stoi(s));
      else if (auto v = value_after(line, "# status: unstable at iter ")) {
        rec.unstable = true;
        rec.unstable_iter = std::stoi(*v);
        const auto open = v->find('(');
        if (open != std::string::npos) rec.unstable_reason = v->substr(open + 1, v->size() - open - 2);
      } else if (auto v = value_after(line, "# aborted: ")) rec.aborted = *v == "yes";
      else if (auto v = value_after(line, "# updates: ")) {
        std::sscanf(v->c_str(), "generator=%" SCNu64 " fake=%" SCNu64 " cost_units=%" SCNu64,
                    &rec.generator_updates, &rec.fake_updates, &rec.cost_units);
      } else if (auto v = value_after(line, "# config: ")) rec.config = nlohmann::json::parse(*v);
      continue;
    }
    if (!header_seen) {
      if (line != kRunRecordColumns)
        throw IoError("run record: unexpected column header on line " + std::to_string(lineno));
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 9)
      throw IoError("run record: expected 9 fields on line " + std::to_string(lineno));
    RunRow r;
    r.iter = std::stoi(f[0]);
    r.fd = parse_double(f[1], lineno);
    r.mode_recall = parse_double(f[2], lineno);
    r.diversity = parse_double(f[3], lineno);
    r.mean_stat = parse_double(f[4], lineno);
    r.dsm_loss = parse_double(f[5], lineno);
    r.gan_d_loss = parse_double(f[6], lineno);
    r.gan_g_loss = parse_double(f[7], lineno);
    r.wallclock = parse_double(f[8], lineno);
    rec.rows.push_back(r);
  }
  if (!header_seen) throw IoError("run record: missing column header");
  return rec;
}

void RunRecord::save(const std::string& path) const {
  const std::string text = to_csv(true);
  binio::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

RunRecord RunRecord::load(const std::string& path) {
  const auto bytes = binio::read_file(path);
  return from_csv(std::string(bytes.begin(), bytes.end()));
}

}  // namespace dmd2
