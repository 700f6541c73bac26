#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "geomppca/frame_bundle.hpp"

namespace geomppca {

/// Parameters of the anisotropic model: mean m, square-root covariance frame W
/// (d x k, chart coordinates at m), isotropic noise level sigma and horizon T.
struct ModelParams {
  ManifoldChart chart;
  Vec m;
  Mat W;
  double sigma = 0.0;
  double T = 1.0;

  int dim() const { return chart.dim(); }
  int rank() const { return static_cast<int>(W.cols()); }
  /// Checks shapes, W full column rank, sigma >= 0, sigma > 0 when k < d, T > 0.
  void validate() const;
};

/// Gaussian driving increments for n steps: latent (n x k) and isotropic
/// noise (n x d), each entry N(0, dt).
struct DrivingIncrements {
  double dt = 0.0;
  Eigen::MatrixXd latent;
  Eigen::MatrixXd noise;
  std::uint64_t seed = 0;
};

/// A simulated path of the model: base points, the W frame, the g-orthonormal
/// R frame and the cumulative latent path, on a uniform time grid.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> base;
  std::vector<Mat> frameW;
  std::vector<Mat> frameR;
  std::vector<Vec> latent;

  std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
};

/// Draws reproducible increments; dt = T / n. Latent entries are drawn first
/// (row-major), then noise entries.
DrivingIncrements simulate_driving(int k, int d, int n, double T, std::uint64_t seed);

/// Integrates dW = H_i(W) o dz^i + sigma H_i(R) o de^i with a Heun
/// predictor-corrector on the joint (x, W, R) system. R starts as the
/// Gram-Schmidt g-orthonormalization of the chart basis at m.
/// Throws RejectedSample when the path leaves the chart domain.
Trajectory develop_stochastic(const ModelParams& params, const DrivingIncrements& drive);

struct SampleSet {
  std::vector<Trajectory> trajectories;
  std::vector<Vec> endpoints;
  std::size_t rejections = 0;
};

/// Seed of the a-th attempt for sample `index`; attempt 0 is the sample seed.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt = 0);

/// Maximum resampling attempts per sample before giving up.
inline constexpr int kMaxSampleAttempts = 100;

/// N independent trajectories with per-sample seeds derived from (seed, index).
/// Samples leaving the chart are resampled with the next attempt seed and
/// counted in `rejections`.
SampleSet forward_samples(const ModelParams& params, int N, int n, std::uint64_t seed,
                          bool keep_trajectories = true);

/// W columns scaled so that column i has g-norm sqrt(variance_i / T) along
/// the g-orthonormal frame at m rotated by `angle` (2-manifolds) or along the
/// frame axes (other dimensions, angle must be 0).
Mat frame_from_variances(const ManifoldChart& chart, const Vec& m, const std::vector<double>& variances,
                         double angle, double T = 1.0);

}  // namespace geomppca
