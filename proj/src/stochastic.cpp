#include "geomppca/stochastic.hpp"

#include <cmath>
#include <string>

#include <Eigen/LU>

#include "geomppca/parallel.hpp"
#include "geomppca/random.hpp"

namespace geomppca {

void ModelParams::validate() const {
  const int d = chart.dim();
  if (m.size() != d) throw InvalidArgument("model: mean has wrong dimension");
  if (W.rows() != d || W.cols() < 1 || W.cols() > d) {
    throw InvalidArgument("model: W must be d x k with 1 <= k <= d");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("model: sigma must be >= 0");
  if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("model: T must be positive");
  chart.require_domain(m);
  if (Eigen::FullPivLU<Mat>(W).rank() != W.cols()) {
    throw InvalidArgument("model: W must have full column rank");
  }
  if (W.cols() < d && sigma <= 0.0) {
    throw InvalidArgument("model: sigma > 0 is required when k < d");
  }
}

DrivingIncrements simulate_driving(int k, int d, int n, double T, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("simulate_driving: n must be >= 1");
  if (k < 0 || d < 1) throw InvalidArgument("simulate_driving: bad dimensions");
  DrivingIncrements out;
  out.dt = T / n;
  out.seed = seed;
  out.latent.resize(n, k);
  out.noise.resize(n, d);
  const double scale = std::sqrt(out.dt);
  NormalStream normal(seed);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < k; ++i) out.latent(j, i) = scale * normal();
  }
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < d; ++i) out.noise(j, i) = scale * normal();
  }
  return out;
}

Trajectory develop_stochastic(const ModelParams& params, const DrivingIncrements& drive) {
  params.validate();
  const ManifoldChart& chart = params.chart;
  const int d = params.dim();
  const int k = params.rank();
  const int n = static_cast<int>(drive.latent.rows());
  if (drive.latent.cols() != k || drive.noise.cols() != d || drive.noise.rows() != n) {
    throw InvalidArgument("develop_stochastic: driving increments do not match the model");
  }

  // Joint frame F = [W | R]; the driving vector is xi = [dz; sigma * de].
  WideMat frame(d, k + d);
  frame.leftCols(k) = params.W;
  frame.rightCols(d) = orthonormal_frame(chart, params.m);
  WideVec xi(k + d);

  Trajectory traj;
  traj.times.reserve(n + 1);
  traj.base.reserve(n + 1);
  traj.frameW.reserve(n + 1);
  traj.frameR.reserve(n + 1);
  traj.latent.reserve(n + 1);

  Vec x = params.m;
  Vec z = Vec::Zero(k);
  auto record = [&](int j) {
    traj.times.push_back(j * drive.dt);
    traj.base.push_back(x);
    traj.frameW.push_back(frame.leftCols(k));
    traj.frameR.push_back(frame.rightCols(d));
    traj.latent.push_back(z);
  };
  record(0);

  for (int j = 0; j < n; ++j) {
    xi.head(k) = drive.latent.row(j).transpose();
    xi.tail(d) = params.sigma * drive.noise.row(j).transpose();

    const Vec dx1 = frame * xi;
    const WideMat r1 = transport_rate(chart.christoffel(x), dx1, frame);
    const Vec xp = x + dx1;
    if (!chart.in_domain(xp)) throw RejectedSample("develop_stochastic: path left the chart");
    const WideMat fp = frame + r1;
    const Vec dx2 = fp * xi;
    const WideMat r2 = transport_rate(chart.christoffel(xp), dx2, fp);

    x += 0.5 * (dx1 + dx2);
    if (!chart.in_domain(x)) throw RejectedSample("develop_stochastic: path left the chart");
    frame += 0.5 * (r1 + r2);
    z += drive.latent.row(j).transpose();
    record(j + 1);
  }
  return traj;
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt) {
  const std::uint64_t base = derive_seed(seed, index);
  return attempt == 0 ? base : derive_seed(base, attempt);
}

SampleSet forward_samples(const ModelParams& params, int N, int n, std::uint64_t seed,
                          bool keep_trajectories) {
  if (N < 1) throw InvalidArgument("forward_samples: N must be >= 1");
  params.validate();
  std::vector<Trajectory> trajectories(N);
  std::vector<std::size_t> rejections(N, 0);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t i) {
    for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
      try {
        const DrivingIncrements drive = simulate_driving(
            params.rank(), params.dim(), n, params.T, sample_seed(seed, i, attempt));
        trajectories[i] = develop_stochastic(params, drive);
        return;
      } catch (const RejectedSample&) {
        ++rejections[i];
      }
    }
    throw EstimationError("forward_samples: sample " + std::to_string(i) +
                          " left the chart on every attempt");
  });

  SampleSet out;
  out.endpoints.reserve(N);
  for (int i = 0; i < N; ++i) {
    out.endpoints.push_back(trajectories[i].base.back());
    out.rejections += rejections[i];
  }
  if (keep_trajectories) out.trajectories = std::move(trajectories);
  return out;
}

Mat frame_from_variances(const ManifoldChart& chart, const Vec& m, const std::vector<double>& variances,
                         double angle, double T) {
  const int d = chart.dim();
  const int k = static_cast<int>(variances.size());
  if (k < 1 || k > d) throw InvalidArgument("frame_from_variances: need 1..d variances");
  Mat basis = orthonormal_frame(chart, m);
  if (angle != 0.0) {
    if (d != 2) throw InvalidArgument("frame_from_variances: angle requires a 2-manifold");
    Mat rot(2, 2);
    rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    basis = basis * rot;
  }
  Mat w(d, k);
  for (int i = 0; i < k; ++i) {
    if (!(variances[i] > 0.0)) throw InvalidArgument("frame_from_variances: variances must be > 0");
    w.col(i) = std::sqrt(variances[i] / T) * basis.col(i);
  }
  return w;
}

}  // namespace geomppca
