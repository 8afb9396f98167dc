#pragma once

#include <span>
#include <vector>

#include "dmd2/denoiser.hpp"

namespace dmd2 {

// mu_fake plus a discriminator head on the backbone's middle hidden layer.
// The head is an MLP with no time input; its single output is the logit of D.
class FakeScoreModel {
 public:
  FakeScoreModel(DenoiserModel backbone, std::vector<std::size_t> head_hidden, Rng& rng);

  struct Output {
    Tensor mu;
    Tensor logit;  // [B, 1], undefined unless requested
  };
  Output forward(const Tensor& xt, std::span<const int> t, bool with_logit,
                 bool track_params = true) const;

  Matrix denoise(const Matrix& xt, std::span<const int> t) const { return backbone_.denoise(xt, t); }
  Matrix logits(const Matrix& xt, std::span<const int> t) const;

  DenoiserModel& backbone() { return backbone_; }
  const DenoiserModel& backbone() const { return backbone_; }
  MlpModel& head() { return head_; }
  const MlpModel& head() const { return head_; }

  // Backbone parameters are prefixed "fake.", head parameters "head.".
  std::vector<NamedParameter> parameters() const;

 private:
  DenoiserModel backbone_;
  MlpModel head_;
};

}  // namespace dmd2
