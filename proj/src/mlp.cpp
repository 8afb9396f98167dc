#include "dmd2/mlp.hpp"

#include <cmath>

#include "dmd2/errors.hpp"

namespace dmd2 {

MlpModel::MlpModel(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ContractError("mlp: need at least input and output widths");
  for (std::size_t w : widths_)
    if (w == 0) throw ContractError("mlp: layer widths must be positive");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    weights_.push_back(Tensor::zeros({widths_[l], widths_[l + 1]}, true));
    biases_.push_back(Tensor::zeros({widths_[l + 1]}, true));
  }
}

MlpModel MlpModel::init(std::vector<std::size_t> widths, Rng& rng) {
  MlpModel model(std::move(widths));
  for (std::size_t l = 0; l < model.weights_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(model.widths_[l]));
    for (double& w : model.weights_[l].mutable_values()) w = bound * (2.0 * rng.uniform() - 1.0);
    for (double& b : model.biases_[l].mutable_values()) b = bound * (2.0 * rng.uniform() - 1.0);
  }
  return model;
}

MlpModel::MlpModel(const MlpModel& other) : widths_(other.widths_) {
  for (const Tensor& w : other.weights_) weights_.push_back(w.clone(true));
  for (const Tensor& b : other.biases_) biases_.push_back(b.clone(true));
}

MlpModel& MlpModel::operator=(const MlpModel& other) {
  if (this != &other) {
    MlpModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

MlpModel::Output MlpModel::forward(const Tensor& x, const Tensor& t_embed, int tap_layer,
                                   bool track_params) const {
  if (x.rank() != 2 || t_embed.rank() != 2)
    throw DimensionError("mlp forward: x and t_embed must be rank-2");
  if (x.dim(0) != t_embed.dim(0))
    throw DimensionError("mlp forward: batch sizes differ (" + std::to_string(x.dim(0)) +
                         " vs " + std::to_string(t_embed.dim(0)) + ")");
  if (x.dim(1) + t_embed.dim(1) != input_width())
    throw DimensionError("mlp forward: input width " + std::to_string(x.dim(1)) + "+" +
                         std::to_string(t_embed.dim(1)) + " does not match layer width " +
                         std::to_string(input_width()));
  Output result;
  Tensor h = t_embed.dim(1) == 0 ? x : concat_cols(x, t_embed);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const Tensor w = track_params ? weights_[l] : weights_[l].detach();
    const Tensor b = track_params ? biases_[l] : biases_[l].detach();
    h = add_bias(matmul(h, w), b);
    if (l + 1 < weights_.size()) {
      h = silu(h);
      if (static_cast<int>(l) == tap_layer) result.tap = h;
    }
  }
  result.out = h;
  return result;
}

Matrix MlpModel::evaluate(const Matrix& x, const Matrix& t_embed, int tap_layer,
                          Matrix* tap) const {
  if (x.rows() != t_embed.rows() ||
      static_cast<std::size_t>(x.cols() + t_embed.cols()) != input_width())
    throw DimensionError("mlp evaluate: input shape does not match the model");
  Matrix h(x.rows(), x.cols() + t_embed.cols());
  h << x, t_embed;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix next = h * weights_[l].matrix();
    next.rowwise() += biases_[l].matrix().row(0);
    if (l + 1 < weights_.size()) {
      next = next.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
      if (tap && static_cast<int>(l) == tap_layer) *tap = next;
    }
    h = std::move(next);
  }
  return h;
}

std::vector<NamedParameter> MlpModel::parameters(const std::string& prefix) const {
  std::vector<NamedParameter> params;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    params.push_back({prefix + "layer" + std::to_string(l) + ".weight", weights_[l]});
    params.push_back({prefix + "layer" + std::to_string(l) + ".bias", biases_[l]});
  }
  return params;
}

std::size_t MlpModel::parameter_count(const std::vector<std::size_t>& widths) {
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) count += (widths[l] + 1) * widths[l + 1];
  return count;
}

void MlpModel::copy_values_from(const MlpModel& other) {
  if (other.widths_ != widths_) throw DimensionError("mlp copy: architectures differ");
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto src_w = other.weights_[l].values();
    auto src_b = other.biases_[l].values();
    std::copy(src_w.begin(), src_w.end(), weights_[l].mutable_values().begin());
    std::copy(src_b.begin(), src_b.end(), biases_[l].mutable_values().begin());
  }
}

}  // namespace dmd2
