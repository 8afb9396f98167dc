#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace dmd2 {

struct RunRow {
  int iter = 0;
  double fd = 0.0;
  double mode_recall = 0.0;
  double diversity = 0.0;
  double mean_stat = 0.0;
  double dsm_loss = 0.0;
  double gan_d_loss = 0.0;
  double gan_g_loss = 0.0;
  double wallclock = 0.0;  // seconds since the start of the run
};

// Per-checkpoint metric log of one distillation run.
struct RunRecord {
  std::string name;
  std::uint64_t config_hash = 0;
  nlohmann::json config;
  std::vector<int> schedule;
  std::vector<RunRow> rows;
  bool unstable = false;
  int unstable_iter = -1;
  std::string unstable_reason;
  bool aborted = false;  // training stopped early on a numerical failure
  std::uint64_t generator_updates = 0;
  std::uint64_t fake_updates = 0;
  std::uint64_t cost_units = 0;

  void mark_unstable(int iter, const std::string& reason);
  const RunRow& final_row() const;
  double final_fd() const { return final_row().fd; }
  std::vector<double> mean_stats(double window_start = 0.0) const;

  // Header lines start with '#'. With include_wallclock=false the wallclock
  // column is written as 0 so that reruns compare byte-for-byte.
  std::string to_csv(bool include_wallclock = true) const;
  static RunRecord from_csv(const std::string& text);

  void save(const std::string& path) const;
  static RunRecord load(const std::string& path);
};

inline constexpr const char* kRunRecordColumns =
    "iter,fd,mode_recall,diversity,mean_stat,dsm_loss,gan_d_loss,gan_g_loss,wallclock";

}  // namespace dmd2
