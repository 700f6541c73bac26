#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "geomppca/geometry.hpp"

namespace geomppca {

/// Closed-form maximum likelihood PPCA fit.
struct EuclideanPPCAFit {
  Eigen::VectorXd m;
  Eigen::MatrixXd W_ml;      // d x k
  double sigma2_ml = 0.0;
  Eigen::VectorXd eigvals;   // sample covariance spectrum, descending
  Eigen::MatrixXd eigvecs;   // matching columns

  int dim() const { return static_cast<int>(m.size()); }
  int rank() const { return static_cast<int>(W_ml.cols()); }
  /// W W^T + sigma^2 I.
  Eigen::MatrixXd covariance() const;
};

/// Rows of `data` are observations. Uses the 1/N sample covariance.
/// W_ml = U_k (Lambda_k - sigma^2 I)^{1/2}, column signs chosen so the
/// largest-magnitude entry of each column is positive.
EuclideanPPCAFit ppca_fit(const Eigen::MatrixXd& data, int k);

/// E[x | y] = (W^T W + sigma^2 I)^{-1} W^T (y - m).
Eigen::VectorXd ppca_posterior_mean(const EuclideanPPCAFit& fit, const Eigen::VectorXd& y);

/// Gaussian log-likelihood of the data under N(m, W W^T + sigma^2 I).
double ppca_log_likelihood(const Eigen::MatrixXd& data, const Eigen::VectorXd& m,
                           const Eigen::MatrixXd& W, double sigma2);

/// Frechet mean by Riemannian gradient descent x <- Exp_x(step * mean_i Log_x(y_i)).
Vec frechet_mean(const ManifoldChart& chart, std::span<const Vec> data, int iterations = 100,
                 double step = 0.5);

struct TangentPCAResult {
  Vec base;
  /// g-orthonormal frame at base used for tangent coordinates (columns).
  Mat frame;
  /// N x d tangent coordinates of Log_base(y_i) in `frame`.
  Eigen::MatrixXd coordinates;
  EuclideanPPCAFit fit;
};

/// Linearizes data with the Riemannian logarithm at `base` (the Frechet mean
/// when empty) and fits PPCA in the tangent space. Throws DomainError naming
/// the datum when a logarithm fails.
TangentPCAResult tangent_pca(const ManifoldChart& chart, std::span<const Vec> data, int k,
                             std::optional<Vec> base = std::nullopt);

}  // namespace geomppca
