#include "geomppca/baselines.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace geomppca {

Eigen::MatrixXd EuclideanPPCAFit::covariance() const {
  return W_ml * W_ml.transpose() + sigma2_ml * Eigen::MatrixXd::Identity(dim(), dim());
}

EuclideanPPCAFit ppca_fit(const Eigen::MatrixXd& data, int k) {
  const Eigen::Index n = data.rows();
  const int d = static_cast<int>(data.cols());
  if (k < 1 || k > d) throw InvalidArgument("ppca_fit: need 1 <= k <= d");
  if (n <= k) throw InvalidArgument("ppca_fit: need more observations than components");

  EuclideanPPCAFit fit;
  fit.m = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - fit.m.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw EstimationError("ppca_fit: eigendecomposition failed");
  fit.eigvals = eig.eigenvalues().reverse();
  fit.eigvecs = eig.eigenvectors().rowwise().reverse();
  if (fit.eigvals(0) <= 0.0) throw EstimationError("ppca_fit: degenerate sample covariance");

  fit.sigma2_ml = k < d ? std::max(0.0, fit.eigvals.tail(d - k).mean()) : 0.0;
  if (fit.eigvals(k - 1) < fit.sigma2_ml) {
    throw EstimationError("ppca_fit: rank-k model infeasible (lambda_k < sigma^2)");
  }
  fit.W_ml.resize(d, k);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd u = fit.eigvecs.col(i);
    Eigen::Index arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    if (u(arg) < 0.0) u = -u;
    fit.eigvecs.col(i) = u;
    fit.W_ml.col(i) = std::sqrt(std::max(0.0, fit.eigvals(i) - fit.sigma2_ml)) * u;
  }
  return fit;
}

Eigen::VectorXd ppca_posterior_mean(const EuclideanPPCAFit& fit, const Eigen::VectorXd& y) {
  const int k = fit.rank();
  const Eigen::MatrixXd m =
      fit.W_ml.transpose() * fit.W_ml + fit.sigma2_ml * Eigen::MatrixXd::Identity(k, k);
  return m.fullPivLu().solve(fit.W_ml.transpose() * (y - fit.m));
}

double ppca_log_likelihood(const Eigen::MatrixXd& data, const Eigen::VectorXd& m,
                           const Eigen::MatrixXd& W, double sigma2) {
  const int d = static_cast<int>(data.cols());
  const Eigen::MatrixXd c = W * W.transpose() + sigma2 * Eigen::MatrixXd::Identity(d, d);
  const Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  double log_det = 0.0;
  for (int i = 0; i < d; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  double quad = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    quad += llt.matrixL().solve(Eigen::VectorXd(data.row(r).transpose() - m)).squaredNorm();
  }
  const double n = static_cast<double>(data.rows());
  return -0.5 * (n * (d * std::log(2.0 * std::numbers::pi) + log_det) + quad);
}

Vec frechet_mean(const ManifoldChart& chart, std::span<const Vec> data, int iterations, double step) {
  if (data.empty()) throw InvalidArgument("frechet_mean: no data");
  Vec x = data.front();
  for (int it = 0; it < iterations; ++it) {
    Vec grad = Vec::Zero(chart.dim());
    for (const Vec& y : data) grad += riemannian_log(chart, x, y);
    grad /= static_cast<double>(data.size());
    if (std::sqrt(grad.dot(chart.metric(x) * grad)) < 1e-14) break;
    x = riemannian_exp(chart, x, step * grad);
  }
  return x;
}

TangentPCAResult tangent_pca(const ManifoldChart& chart, std::span<const Vec> data, int k,
                             std::optional<Vec> base) {
  if (data.empty()) throw InvalidArgument("tangent_pca: no data");
  TangentPCAResult out;
  out.base = base ? *base : frechet_mean(chart, data);
  out.frame = orthonormal_frame(chart, out.base);
  const Eigen::FullPivLU<Mat> frame_lu(out.frame);
  const int d = chart.dim();
  out.coordinates.resize(static_cast<Eigen::Index>(data.size()), d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    Vec v;
    try {
      v = riemannian_log(chart, out.base, data[i]);
    } catch (const DomainError& e) {
      throw DomainError("tangent_pca: logarithm failed for datum " + std::to_string(i) + ": " +
                        e.what());
    }
    out.coordinates.row(static_cast<Eigen::Index>(i)) = frame_lu.solve(v).transpose();
  }
  out.fit = ppca_fit(out.coordinates, k);
  return out;
}

}  // namespace geomppca
