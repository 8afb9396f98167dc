#include "dmd2/schedule.hpp"

#include <cmath>
#include <string>

#include "dmd2/errors.hpp"

namespace dmd2 {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha, std::vector<double> sigma)
    : alpha_(std::move(alpha)), sigma_(std::move(sigma)) {}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw ContractError("schedule: need at least 2 steps");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw ContractError("schedule: betas must satisfy 0 < beta_start <= beta_end < 1");
  std::vector<double> alpha(steps), sigma(steps);
  double log_alpha_bar = 0.0;
  for (int t = 0; t < steps; ++t) {
    const double beta = beta_start + (beta_end - beta_start) * t / (steps - 1);
    log_alpha_bar += std::log1p(-beta);
    const double alpha_bar = std::exp(log_alpha_bar);
    alpha[t] = std::sqrt(alpha_bar);
    sigma[t] = std::sqrt(-std::expm1(log_alpha_bar));
  }
  return from_tables(std::move(alpha), std::move(sigma));
}

NoiseSchedule NoiseSchedule::from_tables(std::vector<double> alpha, std::vector<double> sigma) {
  if (alpha.size() != sigma.size() || alpha.empty())
    throw ContractError("schedule: alpha and sigma tables must be non-empty and equal length");
  for (std::size_t t = 0; t < alpha.size(); ++t) {
    if (!(alpha[t] >= 0.0 && alpha[t] <= 1.0) || !(sigma[t] >= 0.0 && sigma[t] <= 1.0))
      throw ContractError("schedule: alpha/sigma out of [0,1] at t=" + std::to_string(t));
    if (std::abs(alpha[t] * alpha[t] + sigma[t] * sigma[t] - 1.0) > 1e-12)
      throw ContractError("schedule: variance-preserving constraint violated at t=" +
                          std::to_string(t));
    if (t > 0 && (alpha[t] > alpha[t - 1] || sigma[t] < sigma[t - 1]))
      throw ContractError("schedule: tables not monotone at t=" + std::to_string(t));
  }
  return NoiseSchedule(std::move(alpha), std::move(sigma));
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 0 || t >= steps())
    throw IndexError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) +
                     ")");
}

double NoiseSchedule::alpha(int t) const {
  check_timestep(t);
  return alpha_[t];
}

double NoiseSchedule::sigma(int t) const {
  check_timestep(t);
  return sigma_[t];
}

TimestepRange trained_range(const NoiseSchedule& schedule, double lo_frac, double hi_frac) {
  if (!(0.0 <= lo_frac && lo_frac <= hi_frac && hi_frac <= 1.0))
    throw ContractError("timestep range fractions must satisfy 0 <= lo <= hi <= 1");
  const int last = schedule.steps() - 1;
  TimestepRange r;
  r.lo = std::min(last, static_cast<int>(std::lround(lo_frac * schedule.steps())));
  r.hi = std::min(last, static_cast<int>(std::lround(hi_frac * schedule.steps())));
  while (r.lo <= r.hi && schedule.sigma(r.lo) == 0.0) ++r.lo;
  if (r.lo > r.hi) throw ContractError("timestep range contains no step with sigma > 0");
  return r;
}

}  // namespace dmd2
