#include "dmd2/optimizer.hpp"

#include <cmath>

#include "dmd2/errors.hpp"

namespace dmd2 {

AdamW::AdamW(std::vector<NamedParameter> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    if (!p.tensor.is_leaf()) throw ContractError("adamw: parameter " + p.name + " is not a leaf");
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
  lr_scale_.assign(params_.size(), 1.0);
}

void AdamW::set_lr_scale(const std::string& prefix, double scale) {
  if (!(scale > 0.0)) throw ContractError("adamw: lr scale must be positive");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name.rfind(prefix, 0) == 0) lr_scale_[i] = scale;
}

void AdamW::step() {
  for (const auto& p : params_) {
    for (double g : p.tensor.grad())
      if (!std::isfinite(g))
        throw PoisonedStateError("adamw: non-finite gradient in parameter '" + p.name + "'");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const double lr = options_.lr * lr_scale_[i];
    const double step_size = lr / bc1;
    const double decay = 1.0 - lr * options_.weight_decay;
    Tensor param = params_[i].tensor;
    auto values = param.mutable_values();
    auto grad = param.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g;
      v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g * g;
      const double denom = std::sqrt(v[k]) / std::sqrt(bc2) + options_.eps;
      values[k] = values[k] * decay - step_size * m[k] / denom;
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace dmd2
