#include "geomppca/bridge.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>

#include "geomppca/parallel.hpp"
#include "geomppca/random.hpp"

namespace geomppca {

namespace {

// Quantities shared by all bridges of one model.
struct BridgeModel {
  ManifoldChart chart;
  int d = 0;
  int k = 0;
  double sigma = 0.0;
  double T = 1.0;
  Vec m;
  WideMat frame0;  // [W | R0]
};

BridgeModel make_model(const ModelParams& params) {
  params.validate();
  BridgeModel model{params.chart, params.dim(), params.rank(), params.sigma, params.T, params.m, {}};
  model.frame0.resize(model.d, model.k + model.d);
  model.frame0.leftCols(model.k) = params.W;
  model.frame0.rightCols(model.d) = orthonormal_frame(params.chart, params.m);
  return model;
}

// Fixed-size linear algebra for the inner loop; D == Eigen::Dynamic falls back
// to the capacity-bounded types.
// C is the column count k + d of the joint frame.
template <int D, int C>
struct KernelTypes {
  static constexpr int kMax = D == Eigen::Dynamic ? kMaxDim : D;
  static constexpr int kMaxCols = C == Eigen::Dynamic ? 2 * kMax : C;
  using V = Eigen::Matrix<double, D, 1, 0, kMax, 1>;
  using M = Eigen::Matrix<double, D, D, 0, kMax, kMax>;
  using F = Eigen::Matrix<double, D, C, 0, kMax, kMaxCols>;
  using B = Eigen::Matrix<double, C, 1, 0, kMaxCols, 1>;
  using G = std::array<M, kMax>;
};

template <int D, int C>
typename KernelTypes<D, C>::G christoffel_at(const ManifoldChart& chart, const Vec& x) {
  const Christoffel c = chart.christoffel(x);
  typename KernelTypes<D, C>::G out;
  for (int a = 0; a < c.dim; ++a) out[a] = c.symbols[a];
  return out;
}

// -Gamma(dx, F)
template <int D, int C>
typename KernelTypes<D, C>::F transport(const typename KernelTypes<D, C>::G& gamma, int d,
                                        const typename KernelTypes<D, C>::V& dx,
                                        const typename KernelTypes<D, C>::F& frame) {
  typename KernelTypes<D, C>::F out(d, frame.cols());
  for (int a = 0; a < d; ++a) out.row(a).noalias() = -(dx.transpose() * gamma[a]) * frame;
  return out;
}

// -1/2 Gamma^a_{bc} S^{bc}
template <int D, int C>
typename KernelTypes<D, C>::V ito_drift(const typename KernelTypes<D, C>::G& gamma, int d,
                                        const typename KernelTypes<D, C>::M& cov) {
  typename KernelTypes<D, C>::V out(d);
  for (int a = 0; a < d; ++a) out(a) = -0.5 * gamma[a].cwiseProduct(cov).sum();
  return out;
}

// Single attempt. Throws RejectedSample on leaving the chart.
template <int D, int C>
BridgePath run_bridge_impl(const BridgeModel& model, const Vec& target, int n, std::uint64_t seed,
                           const BridgeRecording& rec) {
  using T = KernelTypes<D, C>;
  using V = typename T::V;
  using M = typename T::M;
  using F = typename T::F;
  const ManifoldChart& chart = model.chart;
  const int d = model.d;
  const int k = model.k;
  const double dt = model.T / n;
  const double sqrt_dt = std::sqrt(dt);
  NormalStream normal(seed);

  const V v = target;
  V x = model.m;
  F frame = model.frame0;
  Vec z = Vec::Zero(k);
  BridgePath out;
  auto record = [&](const V& point, const F& f) {
    if (rec.base) out.base.push_back(Vec(point));
    if (rec.frames) out.frames.push_back(WideMat(f));
    if (rec.latent) out.latent.push_back(z);
  };
  record(x, frame);

  // C = [W, sigma R] as column scaling of the joint frame.
  auto scaled = [&](const F& f) {
    F c = f;
    c.rightCols(d) *= model.sigma;
    return c;
  };

  auto gamma = christoffel_at<D, C>(chart, Vec(x));
  typename T::B db(k + d);
  double log_weight = 0.0;
  for (int j = 0; j + 1 < n; ++j) {
    const double t = j * dt;
    const F c = scaled(frame);
    const M cov = c * c.transpose();
    const Eigen::LLT<M> llt(cov);
    if (llt.info() != Eigen::Success) throw EstimationError("bridge: singular diffusion");
    const V drift = ito_drift<D, C>(gamma, d, cov);
    const V guide = (v - x) / (model.T - t);

    for (int i = 0; i < k + d; ++i) db(i) = sqrt_dt * normal();
    const V noise = c * db;
    const V shifted = guide * dt + noise;  // dx - b dt
    const V dx = drift * dt + shifted;

    const V white_target = llt.matrixL().solve(shifted);
    const V white_proposal = llt.matrixL().solve(noise);
    log_weight += (white_proposal.squaredNorm() - white_target.squaredNorm()) / (2.0 * dt);

    z += db.head(k) + frame.leftCols(k).transpose() * llt.solve(guide) * dt;

    const F r1 = transport<D, C>(gamma, d, dx, frame);
    const V x1 = x + dx;
    if (!chart.in_domain(Vec(x1))) throw RejectedSample("bridge: path left the chart");
    gamma = christoffel_at<D, C>(chart, Vec(x1));
    const F r2 = transport<D, C>(gamma, d, dx, F(frame + r1));
    frame += 0.5 * (r1 + r2);
    x = x1;
    record(x, frame);
  }

  // Final step lands on v.
  const F c = scaled(frame);
  const M cov = c * c.transpose();
  const Eigen::LLT<M> llt(cov);
  if (llt.info() != Eigen::Success) throw EstimationError("bridge: singular diffusion");
  const V residual = v - x - ito_drift<D, C>(gamma, d, cov) * dt;
  const V white = llt.matrixL().solve(residual);
  double log_det = 0.0;
  for (int i = 0; i < d; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  log_weight += -0.5 * white.squaredNorm() / dt -
                0.5 * (d * std::log(2.0 * std::numbers::pi * dt) + log_det);
  z += frame.leftCols(k).transpose() * llt.solve(residual);
  out.hit_error = (x - v).norm();
  if (rec.frames || rec.base || rec.latent) {
    const V dx = v - x;
    const F r1 = transport<D, C>(gamma, d, dx, frame);
    const F r2 = transport<D, C>(christoffel_at<D, C>(chart, Vec(v)), d, dx, F(frame + r1));
    record(v, F(frame + 0.5 * (r1 + r2)));
  }
  out.log_weight = log_weight;
  out.latent_end = z;
  return out;
}

BridgePath run_bridge(const BridgeModel& model, const Vec& v, int n, std::uint64_t seed,
                      const BridgeRecording& rec) {
  constexpr int X = Eigen::Dynamic;
  switch (10 * model.d + model.k) {
    case 21:
      return run_bridge_impl<2, 3>(model, v, n, seed, rec);
    case 22:
      return run_bridge_impl<2, 4>(model, v, n, seed, rec);
    case 31:
      return run_bridge_impl<3, 4>(model, v, n, seed, rec);
    case 32:
      return run_bridge_impl<3, 5>(model, v, n, seed, rec);
    case 33:
      return run_bridge_impl<3, 6>(model, v, n, seed, rec);
    default:
      return run_bridge_impl<X, X>(model, v, n, seed, rec);
  }
}

BridgePath run_with_resampling(const BridgeModel& model, const Vec& v, int n, std::uint64_t seed,
                               const BridgeRecording& rec) {
  std::size_t rejections = 0;
  for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
    try {
      BridgePath path = run_bridge(model, v, n, attempt == 0 ? seed : derive_seed(seed, attempt), rec);
      path.rejections = rejections;
      return path;
    } catch (const RejectedSample&) {
      ++rejections;
    }
  }
  throw EstimationError("bridge: every attempt left the chart");
}

void check_bridge_args(const ModelParams& params, const Vec& v, int n) {
  if (n < 1) throw InvalidArgument("bridge: n must be >= 1");
  if (v.size() != params.dim()) throw InvalidArgument("bridge: target has wrong dimension");
  params.chart.require_domain(v);
}

}  // namespace

BridgePath simulate_bridge(const ModelParams& params, const Vec& v, int n, std::uint64_t seed,
                           BridgeRecording recording) {
  const BridgeModel model = make_model(params);
  check_bridge_args(params, v, n);
  return run_with_resampling(model, v, n, seed, recording);
}

BridgeSample guided_bridge(const ModelParams& params, const Vec& v, int n, std::uint64_t seed) {
  BridgePath path = simulate_bridge(params, v, n, seed, {true, true, true});
  const int d = params.dim();
  const int k = params.rank();
  BridgeSample out;
  out.log_weight = path.log_weight;
  out.target = v;
  out.hit_error = path.hit_error;
  out.rejections = path.rejections;
  Trajectory& traj = out.trajectory;
  const double dt = params.T / n;
  for (int j = 0; j <= n; ++j) {
    traj.times.push_back(j * dt);
    traj.base.push_back(path.base[j]);
    traj.frameW.push_back(path.frames[j].leftCols(k));
    traj.frameR.push_back(path.frames[j].rightCols(d));
    traj.latent.push_back(path.latent[j]);
  }
  return out;
}

DensityEstimate transition_density(const ModelParams& params, const Vec& v, int n, int n_samples,
                                   std::uint64_t seed) {
  if (n_samples < 1) throw InvalidArgument("transition_density: n_samples must be >= 1");
  const BridgeModel model = make_model(params);
  check_bridge_args(params, v, n);

  std::vector<double> log_w(n_samples);
  std::vector<std::size_t> rejected(n_samples, 0);
  parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t b) {
    const BridgePath path = run_with_resampling(model, v, n, derive_seed(seed, b), {});
    log_w[b] = path.log_weight;
    rejected[b] = path.rejections;
  });

  DensityEstimate est;
  est.n_samples = n_samples;
  for (std::size_t r : rejected) est.rejections += r;
  const double max_lw = *std::max_element(log_w.begin(), log_w.end());
  if (!std::isfinite(max_lw)) throw EstimationError("transition_density: non-finite log weight");
  double sum = 0.0, sum_sq = 0.0;
  for (double lw : log_w) {
    const double w = std::exp(lw - max_lw);
    sum += w;
    sum_sq += w * w;
  }
  const double mean_scaled = sum / n_samples;
  const double var_scaled =
      n_samples > 1 ? std::max(0.0, (sum_sq - n_samples * mean_scaled * mean_scaled) / (n_samples - 1))
                    : 0.0;
  const double scale = std::exp(max_lw);
  est.chart_density = scale * mean_scaled;
  est.chart_std_error = scale * std::sqrt(var_scaled / n_samples);
  est.ess = sum_sq > 0.0 ? sum * sum / sum_sq : 0.0;
  const double vol = params.chart.volume_density(v);
  est.value = est.chart_density / vol;
  est.std_error = est.chart_std_error / vol;
  return est;
}

std::uint64_t datum_seed(std::uint64_t seed, const Vec& v) {
  std::uint64_t h = derive_seed(seed, static_cast<std::uint64_t>(v.size()));
  for (int i = 0; i < v.size(); ++i) h = derive_seed(h, std::bit_cast<std::uint64_t>(v(i)));
  return h;
}

std::vector<GridDensity> density_grid(const ModelParams& params, std::span<const Vec> grid, int n,
                                      int n_samples, std::uint64_t seed) {
  std::vector<GridDensity> out;
  out.reserve(grid.size());
  for (const Vec& x : grid) {
    GridDensity point;
    point.x = x;
    try {
      point.estimate = transition_density(params, x, n, n_samples, datum_seed(seed, x));
    } catch (const std::exception& e) {
      point.error = e.what();
    }
    out.push_back(std::move(point));
  }
  return out;
}

LogLikelihood log_likelihood(const ModelParams& params, std::span<const Vec> data, int n,
                             int n_samples, std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("log_likelihood: no data");
  LogLikelihood out;
  out.per_datum.reserve(data.size());
  double var = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const DensityEstimate est =
        transition_density(params, data[i], n, n_samples, datum_seed(seed, data[i]));
    if (!(est.value > 0.0) || !std::isfinite(est.value)) {
      throw EstimationError("log_likelihood: zero density estimate at datum " + std::to_string(i));
    }
    out.value += std::log(est.value);
    const double rel = est.std_error / est.value;
    var += rel * rel;
    out.rejections += est.rejections;
    out.per_datum.push_back(est);
  }
  out.std_error = std::sqrt(var);
  return out;
}

}  // namespace geomppca
