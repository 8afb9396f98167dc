#include "dmd2/fake_score.hpp"

#include "dmd2/errors.hpp"

namespace dmd2 {

namespace {

std::vector<std::size_t> head_widths(const DenoiserModel& backbone,
                                     const std::vector<std::size_t>& hidden) {
  const auto& arch = backbone.arch();
  if (arch.hidden.empty()) throw ContractError("fake score: backbone has no hidden layer to tap");
  std::vector<std::size_t> w{arch.hidden.at(arch.middle_layer())};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(1);
  return w;
}

}  // namespace

FakeScoreModel::FakeScoreModel(DenoiserModel backbone, std::vector<std::size_t> head_hidden,
                               Rng& rng)
    : backbone_(std::move(backbone)),
      head_(MlpModel::init(head_widths(backbone_, head_hidden), rng)) {}

FakeScoreModel::Output FakeScoreModel::forward(const Tensor& xt, std::span<const int> t,
                                               bool with_logit, bool track_params) const {
  auto out = backbone_.forward(xt, t, with_logit, track_params);
  Output result{out.mu, {}};
  if (with_logit) {
    const Tensor no_embed = Tensor::zeros({out.tap.dim(0), 0});
    result.logit = head_.forward(out.tap, no_embed, -1, track_params).out;
  }
  return result;
}

Matrix FakeScoreModel::logits(const Matrix& xt, std::span<const int> t) const {
  Matrix tap;
  backbone_.denoise(xt, t, &tap);
  return head_.evaluate(tap, Matrix(tap.rows(), 0));
}

std::vector<NamedParameter> FakeScoreModel::parameters() const {
  auto params = backbone_.parameters("fake.");
  auto head = head_.parameters("head.");
  params.insert(params.end(), head.begin(), head.end());
  return params;
}

}  // namespace dmd2
