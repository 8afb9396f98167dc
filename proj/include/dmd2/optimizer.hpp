#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmd2/mlp.hpp"

namespace dmd2 {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Parameters without an accumulated gradient
// are treated as having a zero gradient. Gradients are left untouched by
// step(); clear them with zero_grad().
class AdamW {
 public:
  AdamW(std::vector<NamedParameter> params, AdamWOptions options);

  // Throws PoisonedStateError naming the first parameter with a non-finite gradient.
  void step();
  void zero_grad();

  std::uint64_t step_count() const { return steps_; }
  const AdamWOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  // Multiplies the learning rate of every parameter whose name starts with prefix.
  void set_lr_scale(const std::string& prefix, double scale);
  double lr_scale(std::size_t i) const { return lr_scale_.at(i); }

  const std::vector<NamedParameter>& params() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<NamedParameter> params_;
  AdamWOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::vector<double> lr_scale_;
  std::uint64_t steps_ = 0;
};

}  // namespace dmd2
