#include "dmd2/denoiser.hpp"

#include <cmath>
#include <numbers>

#include "dmd2/errors.hpp"

namespace dmd2 {

Matrix time_embedding(std::span<const int> t, int total_steps, int frequencies) {
  Matrix emb(static_cast<Eigen::Index>(t.size()), 2 * frequencies);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double u = static_cast<double>(t[i]) / total_steps;
    double w = std::numbers::pi / 2.0;
    for (int k = 0; k < frequencies; ++k, w *= 2.0) {
      emb(i, 2 * k) = std::sin(w * u);
      emb(i, 2 * k + 1) = std::cos(w * u);
    }
  }
  return emb;
}

std::vector<std::size_t> DenoiserArch::widths() const {
  std::vector<std::size_t> w;
  w.push_back(static_cast<std::size_t>(dim + embed_dim()));
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(static_cast<std::size_t>(dim));
  return w;
}

nlohmann::json arch_to_json(const DenoiserArch& arch) {
  return {{"dim", arch.dim},
          {"hidden", arch.hidden},
          {"time_frequencies", arch.time_frequencies},
          {"data_scale", arch.data_scale}};
}

DenoiserArch arch_from_json(const nlohmann::json& j) {
  DenoiserArch arch;
  arch.dim = j.at("dim").get<int>();
  arch.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  arch.time_frequencies = j.at("time_frequencies").get<int>();
  arch.data_scale = j.at("data_scale").get<double>();
  return arch;
}

namespace {
void validate(const DenoiserArch& arch) {
  if (arch.dim < 1) throw ContractError("denoiser: dim must be >= 1");
  if (arch.hidden.empty()) throw ContractError("denoiser: need at least one hidden layer");
  if (arch.time_frequencies < 1) throw ContractError("denoiser: need >= 1 time frequency");
  if (!(arch.data_scale > 0.0)) throw ContractError("denoiser: data_scale must be positive");
}
}  // namespace

DenoiserModel::DenoiserModel(DenoiserArch arch, NoiseSchedule schedule)
    : arch_(std::move(arch)), schedule_(std::move(schedule)) {
  validate(arch_);
  mlp_ = MlpModel(arch_.widths());
}

DenoiserModel::DenoiserModel(DenoiserArch arch, NoiseSchedule schedule, Rng& rng)
    : arch_(std::move(arch)), schedule_(std::move(schedule)) {
  validate(arch_);
  mlp_ = MlpModel::init(arch_.widths(), rng);
}

std::vector<double> DenoiserModel::input_scales(std::span<const int> t) const {
  std::vector<double> scales(t.size());
  const double s2 = arch_.data_scale * arch_.data_scale;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double a = schedule_.alpha(t[i]);
    const double s = schedule_.sigma(t[i]);
    scales[i] = 1.0 / std::sqrt(a * a * s2 + s * s);
  }
  return scales;
}

DenoiserModel::Output DenoiserModel::forward(const Tensor& xt, std::span<const int> t,
                                             bool with_tap, bool track_params) const {
  if (xt.rank() != 2 || xt.dim(1) != static_cast<std::size_t>(arch_.dim))
    throw DimensionError("denoiser: expected [B," + std::to_string(arch_.dim) + "] input, got " +
                         shape_str(xt.shape()));
  if (xt.dim(0) != t.size())
    throw DimensionError("denoiser: " + std::to_string(t.size()) + " timesteps for " +
                         std::to_string(xt.dim(0)) + " rows");
  const auto scales = input_scales(t);
  const Tensor emb = Tensor::from_matrix(time_embedding(t, schedule_.steps(), arch_.time_frequencies));
  auto out = mlp_.forward(scale_rows(xt, scales), emb, with_tap ? arch_.middle_layer() : -1,
                          track_params);
  return {scale(out.out, arch_.data_scale), out.tap};
}

Matrix DenoiserModel::denoise(const Matrix& xt, std::span<const int> t) const {
  return denoise(xt, t, nullptr);
}

Matrix DenoiserModel::denoise(const Matrix& xt, std::span<const int> t, Matrix* tap) const {
  if (xt.cols() != arch_.dim || static_cast<std::size_t>(xt.rows()) != t.size())
    throw DimensionError("denoiser: input shape does not match timesteps/dim");
  const auto scales = input_scales(t);
  Matrix scaled = xt;
  for (Eigen::Index i = 0; i < scaled.rows(); ++i) scaled.row(i) *= scales[i];
  const Matrix emb = time_embedding(t, schedule_.steps(), arch_.time_frequencies);
  return mlp_.evaluate(scaled, emb, arch_.middle_layer(), tap) * arch_.data_scale;
}

Checkpoint DenoiserModel::to_checkpoint(std::uint64_t config_hash) const {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  ckpt.meta = {{"kind", "denoiser"}, {"arch", arch_to_json(arch_)}};
  for (const auto& p : parameters()) ckpt.tensors.push_back({p.name, p.tensor.detach()});
  return ckpt;
}

DenoiserModel DenoiserModel::from_checkpoint(const Checkpoint& ckpt, NoiseSchedule schedule) {
  if (!ckpt.meta.contains("arch")) throw IoError("checkpoint: missing architecture metadata");
  DenoiserModel model(arch_from_json(ckpt.meta.at("arch")), std::move(schedule));
  for (auto& p : model.parameters()) {
    const Tensor& src = ckpt.find(p.name);
    if (src.shape() != p.tensor.shape())
      throw DimensionError("checkpoint: tensor '" + p.name + "' has shape " +
                           shape_str(src.shape()) + ", model expects " +
                           shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_values();
    std::copy(src.values().begin(), src.values().end(), dst.begin());
  }
  return model;
}

}  // namespace dmd2
