#include "dmd2/metrics.hpp"

#include <cmath>
#include <iostream>

#include "dmd2/errors.hpp"

namespace dmd2 {

SampleStats SampleStats::from_samples(const Matrix& samples) {
  if (samples.rows() < 2) throw ContractError("sample stats: need at least 2 samples");
  SampleStats s;
  s.n = static_cast<std::size_t>(samples.rows());
  s.mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - s.mean.transpose();
  s.covariance = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  return s;
}

SampleStats SampleStats::from_gmm(const GmmSpec& gmm) {
  return {0, gmm.mean(), gmm.covariance()};
}

SquareMatrix psd_sqrt(const SquareMatrix& m) {
  const SquareMatrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<SquareMatrix> eig(sym);
  if (eig.info() != Eigen::Success) throw MatrixError("psd_sqrt: eigendecomposition failed");
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double frechet_distance(const SampleStats& a, const SampleStats& b) {
  if (a.mean.size() != b.mean.size()) throw DimensionError("frechet_distance: dimensions differ");
  // tr (S_a S_b)^{1/2} = tr (S_a^{1/2} S_b S_a^{1/2})^{1/2}; the inner product is symmetric PSD.
  const SquareMatrix root_a = psd_sqrt(a.covariance);
  const SquareMatrix inner = root_a * b.covariance * root_a;
  const SquareMatrix sym = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<SquareMatrix> eig(sym);
  if (eig.info() != Eigen::Success) throw MatrixError("frechet_distance: eigendecomposition failed");
  if (eig.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff()))
    std::cerr << "warning: frechet_distance: covariance product not PSD (min eigenvalue "
              << eig.eigenvalues().minCoeff() << "); clipping\n";
  const double trace_root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fd = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() -
                    2.0 * trace_root;
  return std::max(0.0, fd);
}

double mode_recall(const Matrix& samples, const GmmSpec& gmm, double radius_multiplier) {
  if (samples.rows() == 0) throw ContractError("mode_recall: no samples");
  if (samples.cols() != gmm.dim()) throw DimensionError("mode_recall: sample width mismatch");
  const double n = static_cast<double>(samples.rows());
  int eligible = 0, covered = 0;
  for (int k = 0; k < gmm.components(); ++k) {
    if (gmm.weights[k] <= 0.0) continue;
    ++eligible;
    Eigen::SelfAdjointEigenSolver<SquareMatrix> eig(gmm.covariances[k], Eigen::EigenvaluesOnly);
    const double radius = radius_multiplier * std::sqrt(eig.eigenvalues().maxCoeff());
    const double needed = std::max(1.0, n * gmm.weights[k] / 4.0);
    const Vector mu = gmm.means[k];
    const auto hits = ((samples.rowwise() - mu.transpose()).rowwise().norm().array() <= radius).count();
    if (static_cast<double>(hits) >= needed) ++covered;
  }
  return eligible == 0 ? 0.0 : static_cast<double>(covered) / eligible;
}

double diversity_score(const std::vector<Matrix>& groups) {
  if (groups.empty()) throw ContractError("diversity_score: no groups");
  double total = 0.0;
  for (const Matrix& g : groups) {
    if (g.rows() < 2) throw ContractError("diversity_score: each group needs at least 2 samples");
    double sum = 0.0;
    int pairs = 0;
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = i + 1; j < g.rows(); ++j, ++pairs) sum += (g.row(i) - g.row(j)).norm();
    total += sum / pairs;
  }
  return total / static_cast<double>(groups.size());
}

TraceStats mean_statistic_trace(const std::vector<double>& trace) {
  if (trace.size() < 10) throw ContractError("mean_statistic_trace: need at least 10 checkpoints");
  const double n = static_cast<double>(trace.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += trace[i];
    sxx += x * x;
    sxy += x * trace[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double r = trace[i] - (intercept + slope * static_cast<double>(i));
    ss += r * r;
  }
  return {trace, std::sqrt(ss / n)};
}

}  // namespace dmd2
