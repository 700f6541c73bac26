#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geomppca/stochastic.hpp"

namespace geomppca {

/// One guided bridge. The last base point equals the target.
struct BridgeSample {
  Trajectory trajectory;
  double log_weight = 0.0;
  Vec target;
  /// Chart distance from the penultimate base point to the target.
  double hit_error = 0.0;
  std::size_t rejections = 0;
};

/// Which parts of a bridge path to keep.
struct BridgeRecording {
  bool base = false;
  bool frames = false;
  bool latent = false;
};

/// Raw output of the bridge kernel.
struct BridgePath {
  double log_weight = 0.0;
  double hit_error = 0.0;
  Vec latent_end;
  std::vector<Vec> base;
  std::vector<WideMat> frames;  // [W | R] per grid point
  std::vector<Vec> latent;
  std::size_t rejections = 0;
};

/// Simulates one guided bridge to v in n steps, resampling (with derived
/// seeds) when the path leaves the chart.
///
/// Steps j = 0..n-2 use the proposal
///   dx = (b_j + (v - x_j) / (T - t_j)) dt + C_j dB,   C_j = [W_j, sigma R_j],
/// where b_j = -1/2 Gamma(x_j)(C_j, C_j) is the Ito drift of the Stratonovich
/// frame diffusion. Frames are Heun-transported along dx. The log weight sums
/// the Euler kernel ratios N(x_{j+1}; x_j + b_j dt, S_j dt) / N(x_{j+1}; proposal
/// mean, S_j dt) with S_j = C_j C_j^T, plus the final kernel N(v; x_{n-1} + b dt,
/// S_{n-1} dt). The latent path accumulates dB[0:k] + W^T S^{-1} guide dt on
/// guided steps and W^T S^{-1} (v - x - b dt) on the final step.
BridgePath simulate_bridge(const ModelParams& params, const Vec& v, int n, std::uint64_t seed,
                           BridgeRecording recording = {});

/// guided_bridge with the full trajectory recorded.
BridgeSample guided_bridge(const ModelParams& params, const Vec& v, int n, std::uint64_t seed);

/// Monte Carlo transition density at v.
struct DensityEstimate {
  /// Density w.r.t. the Riemannian volume.
  double value = 0.0;
  double std_error = 0.0;
  /// Density w.r.t. chart Lebesgue measure.
  double chart_density = 0.0;
  double chart_std_error = 0.0;
  int n_samples = 0;
  std::size_t rejections = 0;
  double ess = 0.0;
};

/// Mean of exp(log_weight) over n_samples independent bridges; bridge b uses
/// seed derive_seed(seed, b).
DensityEstimate transition_density(const ModelParams& params, const Vec& v, int n, int n_samples,
                                   std::uint64_t seed);

/// Stream seed for a datum, keyed by its coordinates so that identical data
/// share identical bridges.
std::uint64_t datum_seed(std::uint64_t seed, const Vec& v);

struct GridDensity {
  Vec x;
  std::optional<DensityEstimate> estimate;
  std::string error;
};

/// transition_density at every grid point with seed datum_seed(seed, x).
/// Failures are recorded per point.
std::vector<GridDensity> density_grid(const ModelParams& params, std::span<const Vec> grid, int n,
                                      int n_samples, std::uint64_t seed);

struct LogLikelihood {
  double value = 0.0;
  double std_error = 0.0;
  std::vector<DensityEstimate> per_datum;
  std::size_t rejections = 0;
};

/// Sum of log densities (Riemannian volume) with delta-method standard error.
/// Throws EstimationError naming the first datum with zero estimated density.
LogLikelihood log_likelihood(const ModelParams& params, std::span<const Vec> data, int n,
                             int n_samples, std::uint64_t seed);

}  // namespace geomppca
