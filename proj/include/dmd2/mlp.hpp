#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dmd2/random.hpp"
#include "dmd2/tensor.hpp"

namespace dmd2 {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Fully connected network with SiLU hidden activations and a linear output.
// The time embedding is concatenated to the input, so widths.front() is
// input_dim + embed_dim.
class MlpModel {
 public:
  struct Output {
    Tensor out;
    Tensor tap;  // activation of the tapped hidden layer, if requested
  };

  MlpModel() = default;
  // Zero-initialized; use init() for random weights.
  explicit MlpModel(std::vector<std::size_t> widths);
  static MlpModel init(std::vector<std::size_t> widths, Rng& rng);

  MlpModel(const MlpModel& other);
  MlpModel& operator=(const MlpModel& other);
  MlpModel(MlpModel&&) noexcept = default;
  MlpModel& operator=(MlpModel&&) noexcept = default;

  // x: [B, in - E], t_embed: [B, E]. tap_layer indexes hidden layers (0-based);
  // -1 skips the tap. With track_params=false the parameters enter the graph as
  // constants, so gradients flow to the inputs only.
  Output forward(const Tensor& x, const Tensor& t_embed, int tap_layer = -1,
                 bool track_params = true) const;

  // Graph-free evaluation on plain matrices.
  Matrix evaluate(const Matrix& x, const Matrix& t_embed, int tap_layer = -1,
                  Matrix* tap = nullptr) const;

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }
  std::size_t hidden_layers() const { return widths_.size() - 2; }
  std::size_t layer_count() const { return weights_.size(); }

  Tensor& weight(std::size_t layer) { return weights_.at(layer); }
  Tensor& bias(std::size_t layer) { return biases_.at(layer); }
  const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }
  const Tensor& bias(std::size_t layer) const { return biases_.at(layer); }

  std::vector<NamedParameter> parameters(const std::string& prefix = "") const;
  std::size_t parameter_count() const { return parameter_count(widths_); }
  static std::size_t parameter_count(const std::vector<std::size_t>& widths);

  void copy_values_from(const MlpModel& other);

 private:
  std::vector<std::size_t> widths_;
  std::vector<Tensor> weights_;  // [widths[l], widths[l+1]]
  std::vector<Tensor> biases_;   // [widths[l+1]]
};

}  // namespace dmd2
