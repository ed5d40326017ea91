#pragma once

#include <Eigen/Dense>
#include <iostream>

#include "fieldgen/metrics/embedder.hpp"

namespace fieldgen::metrics {

// Gaussian fit of an embedded image set.
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
  long count = 0;

  void validate() const {
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8)
      throw std::invalid_argument("GaussianStats: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.eigenvalues().minCoeff() < -1e-8)
      throw std::invalid_argument("GaussianStats: covariance not PSD");
  }
};

// Streaming (Welford-style) mean and unbiased covariance of [N,E]
// embeddings; the naive two-pass computation lives in the tests as the
// oracle for this.
template <class T>
GaussianStats stats_from_embeddings(const ad::Tensor<T>& embeddings) {
  ad::require(embeddings.rank() == 2 && embeddings.dim(0) >= 2,
              "collect_stats: at least 2 embedded images required, got " +
                  ad::shape_str(embeddings.shape()));
  const long n = embeddings.dim(0), e = embeddings.dim(1);
  GaussianStats out;
  out.mean = Eigen::VectorXd::Zero(e);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(e, e);
  for (long i = 0; i < n; ++i) {
    Eigen::VectorXd x(e);
    for (long j = 0; j < e; ++j)
      x[j] = static_cast<double>(embeddings.at(i * e + j));
    const Eigen::VectorXd delta = x - out.mean;
    out.mean += delta / static_cast<double>(i + 1);
    m2.noalias() += delta * (x - out.mean).transpose();
  }
  // symmetrize away the rounding skew from the rank-1 updates
  out.cov = 0.5 * (m2 + m2.transpose()) / static_cast<double>(n - 1);
  out.count = n;
  return out;
}

template <class T>
GaussianStats collect_stats(const FeatureEmbedder<T>& embedder,
                            const std::vector<ad::Tensor<T>>& images) {
  ad::require(images.size() >= 2, "collect_stats: at least 2 images required");
  std::vector<ad::Tensor<T>> rows;
  ad::NoGradGuard ng;
  for (const auto& img : images) rows.push_back(embedder.embed(img));
  return stats_from_embeddings(rows.size() == 1 ? rows[0]
                                                : ad::concat_rows(rows));
}

namespace detail {

// Symmetric PSD square root with negative-eigenvalue clamping. Eigenvalues
// below -tol are a hard error; small negatives are rounded up to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double tol = 1e-6) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues();
  for (long i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol)
      throw std::invalid_argument(
          "frechet_distance: matrix not PSD within tolerance (eigenvalue " +
          std::to_string(ev[i]) + ")");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ||mu_p - mu_q||^2 + tr(S_p + S_q - 2 (S_p S_q)^{1/2}), the exact
// Gaussian Frechet distance; the cross term uses
// tr((S_p S_q)^{1/2}) = tr(sqrt(A S_q A)) with A = sqrt(S_p).
inline double frechet_distance(const GaussianStats& p,
                               const GaussianStats& q) {
  if (p.mean.size() != q.mean.size())
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  const long e = p.mean.size();
  if (p.count < e + 1 || q.count < e + 1)
    std::cerr << "frechet_distance: warning: sample count below embed_dim+1; "
                 "covariance estimate is rank-deficient\n";
  const Eigen::MatrixXd a = detail::psd_sqrt(p.cov);
  const Eigen::MatrixXd cross = detail::psd_sqrt(a * q.cov * a);
  const double d2 = (p.mean - q.mean).squaredNorm() + p.cov.trace() +
                    q.cov.trace() - 2.0 * cross.trace();
  return std::max(d2, 0.0);
}

}  // namespace fieldgen::metrics
