#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geomppca/bridge.hpp"

namespace geomppca {

// ---------------------------------------------------------------------------
// Monte Carlo maximum likelihood

/// g-orthonormal factorization W = U diag(lambda) V^T with lambda descending.
struct FrameFactorization {
  Mat U;
  Vec lambda;
  Mat V;
};
FrameFactorization factor_frame(const Mat& g, const Mat& W);

struct FitOptions {
  int n = 100;              // time steps per bridge
  int n_samples = 2000;     // bridges per datum
  double step_size = 0.05;  // initial parameter displacement of the first step
  int max_iter = 50;
  std::uint64_t seed = 0;
  double fd_rel_step = 1e-3;
  double min_lambda = 1e-4;
};

struct FitTraceEntry {
  int iter = 0;
  double neg_log_lik = 0.0;
  double std_error = 0.0;
  std::vector<double> lambdas;  // g-norm singular values of W
  double sigma = 0.0;
  double best_neg_log_lik = 0.0;
};

struct PCAFit {
  ModelParams params;
  std::vector<FitTraceEntry> trace;
  int iterations = 0;
  bool converged = false;  // stopped because the line search stalled
  FrameFactorization eigen;
};

/// Fits (m, W, sigma) by gradient descent on the Monte Carlo negative
/// log-likelihood. Parameters are m (chart coordinates), the entries of W and
/// log sigma. Gradients are central finite differences with relative step
/// fd_rel_step; bridge seeds are frozen within an iteration (common random
/// numbers) and refreshed across iterations. The descent direction is the
/// gradient scaled by the diagonal finite-difference curvature; step lengths
/// come from an Armijo backtracking line search starting at 1 (step_size caps
/// the first step). Returns the best parameters seen in the trace.
PCAFit fit_mle(std::span<const Vec> data, const ManifoldChart& chart, int k, const ModelParams& init,
               const FitOptions& opts);

/// Packs and unpacks the fit_mle parameter vector (m, vec(W), log sigma).
Eigen::VectorXd pack_params(const ModelParams& params);
ModelParams unpack_params(const Eigen::VectorXd& theta, const ModelParams& like);

// ---------------------------------------------------------------------------
// Latent principal-component paths

struct LatentSummary {
  std::vector<Vec> mean_path;  // n + 1 points in R^k, starting at 0
  Vec endpoint;
  Mat endpoint_spread;  // weighted covariance of latent endpoints
  double ess = 0.0;
  int n_samples = 0;
  std::size_t rejections = 0;
  std::optional<std::string> warning;  // set when ess < 10
};

/// Self-normalized importance average of the latent paths of guided bridges
/// to y, weighted by exp(log_weight).
LatentSummary principal_paths(const ModelParams& params, const Vec& y, int n, int n_samples,
                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Most probable paths

struct MppOptions {
  int steps = 500;       // RK4 steps over unit time
  int max_iter = 50;     // shooting iterations
  double tolerance = 1e-10;
  /// Warm start; defaults to the flat-space solution.
  std::optional<Eigen::VectorXd> initial_momentum;
};

struct MppResult {
  Eigen::VectorXd initial_momentum;  // (p_x, vec(p_nu))
  std::vector<FramePoint> path;
  double sq_distance = 0.0;
  double endpoint_residual = 0.0;
  double hamiltonian_drift = 0.0;  // max relative deviation along the flow
  int iterations = 0;
};

/// Shooting error carrying the best residual reached.
class ShootingError : public EstimationError {
 public:
  ShootingError(const std::string& what, double residual)
      : EstimationError(what), best_residual(residual) {}
  double best_residual;
};

/// Hamiltonian H(q, p) = 1/2 sum_i <p, H_i(q)>^2 on frame-bundle coordinates
/// q = (x, vec(nu)), and its canonical vector field (dq/dt, dp/dt).
double mpp_hamiltonian(const ManifoldChart& chart, const Eigen::VectorXd& q, const Eigen::VectorXd& p);
std::pair<Eigen::VectorXd, Eigen::VectorXd> mpp_vector_field(const ManifoldChart& chart,
                                                             const Eigen::VectorXd& q,
                                                             const Eigen::VectorXd& p);

/// Normal sub-Riemannian geodesic from u to the fiber over y: solves for the
/// initial momentum such that the base endpoint is y and the final momentum
/// annihilates the vertical directions (fiber endpoint free).
/// sq_distance = 2 H(q0, p0) over unit time.
MppResult mpp_shoot(const FramePoint& u, const Vec& y, const MppOptions& opts = {});

struct MppEstimateOptions {
  int max_iter = 200;
  double fd_step = 1e-5;
  double min_lambda = 1e-4;
  double tolerance = 1e-9;  // on the projected step length
  MppOptions shoot{200, 50, 1e-10, std::nullopt};
};

struct MppEstimate {
  FramePoint u;
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
  bool hit_lower_bound = false;
};

/// Minimizes sum_i d(u, pi^{-1}(y_i))^2 + 2 N log vol_g(u) over u = (x, nu)
/// by finite-difference gradient descent with warm-started shooting. The
/// frame's g-singular values are bounded below by min_lambda.
MppEstimate mpp_estimate(std::span<const Vec> data, const ManifoldChart& chart,
                         const FramePoint& init, const MppEstimateOptions& opts = {});

}  // namespace geomppca
