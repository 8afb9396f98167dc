#pragma once

#include <vector>

#include "dmd2/gmm.hpp"
#include "dmd2/types.hpp"

namespace dmd2 {

struct SampleStats {
  std::size_t n = 0;
  Vector mean;
  SquareMatrix covariance;

  // Unbiased covariance; requires at least 2 rows.
  static SampleStats from_samples(const Matrix& samples);
  // Exact first and second moments of a mixture.
  static SampleStats from_gmm(const GmmSpec& gmm);
};

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}) on raw coordinates.
double frechet_distance(const SampleStats& a, const SampleStats& b);

// Symmetric PSD square root via eigendecomposition, negative eigenvalues clipped to 0.
SquareMatrix psd_sqrt(const SquareMatrix& m);

// Fraction of positive-weight components holding at least max(1, n pi_k / 4)
// samples within radius_multiplier * sqrt(lambda_max(Sigma_k)) of mu_k.
double mode_recall(const Matrix& samples, const GmmSpec& gmm, double radius_multiplier = 3.0);

// Mean over groups of the mean pairwise Euclidean distance within each group.
double diversity_score(const std::vector<Matrix>& groups);

struct TraceStats {
  std::vector<double> trace;
  double fluctuation_std = 0.0;  // population std of residuals after a least-squares linear fit
};

// Requires at least 10 points.
TraceStats mean_statistic_trace(const std::vector<double>& trace);

}  // namespace dmd2
