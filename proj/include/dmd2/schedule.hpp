#pragma once

#include <span>
#include <vector>

namespace dmd2 {

// Discrete variance-preserving schedule: x_t = alpha_t x_0 + sigma_t eps,
// alpha_t^2 + sigma_t^2 = 1, t in [0, T).
class NoiseSchedule {
 public:
  // Linear beta ramp, alpha_t = sqrt(prod_{s<=t} (1 - beta_s)).
  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);
  // Explicit tables; validated for monotonicity and the VP constraint.
  static NoiseSchedule from_tables(std::vector<double> alpha, std::vector<double> sigma);

  int steps() const { return static_cast<int>(alpha_.size()); }
  double alpha(int t) const;
  double sigma(int t) const;
  std::span<const double> alphas() const { return alpha_; }
  std::span<const double> sigmas() const { return sigma_; }

  // Throws IndexError when t is outside [0, T).
  void check_timestep(int t) const;

 private:
  NoiseSchedule(std::vector<double> alpha, std::vector<double> sigma);

  std::vector<double> alpha_;
  std::vector<double> sigma_;
};

// Integer timesteps in [round(lo_frac*T), round(hi_frac*T)], excluding any t with sigma_t = 0.
struct TimestepRange {
  int lo = 0;
  int hi = 0;
};
TimestepRange trained_range(const NoiseSchedule& schedule, double lo_frac, double hi_frac);

}  // namespace dmd2
