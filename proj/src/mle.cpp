#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "geomppca/estimators.hpp"
#include "geomppca/parallel.hpp"
#include "geomppca/random.hpp"

namespace geomppca {

FrameFactorization factor_frame(const Mat& g, const Mat& W) {
  const int k = static_cast<int>(W.cols());
  const Mat gram = W.transpose() * g * W;
  const Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
  FrameFactorization out;
  out.V = eig.eigenvectors().rowwise().reverse();
  out.lambda = eig.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
  out.U.resize(W.rows(), k);
  for (int i = 0; i < k; ++i) {
    out.U.col(i) = out.lambda(i) > 0.0 ? Vec(W * out.V.col(i) / out.lambda(i)) : Vec::Zero(W.rows());
  }
  return out;
}

Eigen::VectorXd pack_params(const ModelParams& params) {
  const int d = params.dim();
  const int k = params.rank();
  Eigen::VectorXd theta(d + d * k + 1);
  theta.head(d) = params.m;
  for (int j = 0; j < k; ++j) theta.segment(d + j * d, d) = params.W.col(j);
  theta(d + d * k) = std::log(params.sigma);
  return theta;
}

ModelParams unpack_params(const Eigen::VectorXd& theta, const ModelParams& like) {
  const int d = like.dim();
  const int k = like.rank();
  ModelParams out = like;
  out.m = theta.head(d);
  for (int j = 0; j < k; ++j) out.W.col(j) = theta.segment(d + j * d, d);
  out.sigma = std::exp(theta(d + d * k));
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Evaluation {
  double nll = kInf;
  double std_error = 0.0;
};

Evaluation evaluate(const Eigen::VectorXd& theta, const ModelParams& like, std::span<const Vec> data,
                    const FitOptions& opts, std::uint64_t seed) {
  try {
    const ModelParams params = unpack_params(theta, like);
    const LogLikelihood ll = log_likelihood(params, data, opts.n, opts.n_samples, seed);
    if (!std::isfinite(ll.value)) return {};
    return {-ll.value, ll.std_error};
  } catch (const DomainError&) {
  } catch (const InvalidArgument&) {
  } catch (const EstimationError&) {
  }
  return {};
}

// Keeps the g-singular values of W at or above the lower bound.
Eigen::VectorXd bound_lambdas(const Eigen::VectorXd& theta, const ModelParams& like, double min_lambda) {
  ModelParams p = unpack_params(theta, like);
  if (!p.chart.in_domain(p.m)) return theta;
  const Mat g = p.chart.metric(p.m);
  const FrameFactorization f = factor_frame(g, p.W);
  if (f.lambda.minCoeff() >= min_lambda) return theta;
  const Vec bounded = f.lambda.cwiseMax(min_lambda);
  // Rebuild U from the g-orthonormal frame when a column collapsed entirely.
  Mat u = f.U;
  const Mat basis = orthonormal_frame(p.chart, p.m);
  for (int i = 0; i < u.cols(); ++i) {
    if (f.lambda(i) > 0.0) continue;
    Vec c = basis.col(i);
    for (int j = 0; j < i; ++j) c -= u.col(j).dot(g * c) * u.col(j);
    u.col(i) = c / std::sqrt(c.dot(g * c));
  }
  p.W = u * bounded.asDiagonal() * f.V.transpose();
  return pack_params(p);
}

FitTraceEntry trace_entry(int iter, const Evaluation& e, const Eigen::VectorXd& theta,
                          const ModelParams& like, double best) {
  const ModelParams p = unpack_params(theta, like);
  const FrameFactorization f = factor_frame(p.chart.metric(p.m), p.W);
  FitTraceEntry entry;
  entry.iter = iter;
  entry.neg_log_lik = e.nll;
  entry.std_error = e.std_error;
  entry.lambdas.assign(f.lambda.data(), f.lambda.data() + f.lambda.size());
  entry.sigma = p.sigma;
  entry.best_neg_log_lik = best;
  return entry;
}

}  // namespace

PCAFit fit_mle(std::span<const Vec> data, const ManifoldChart& chart, int k, const ModelParams& init,
               const FitOptions& opts) {
  if (data.empty()) throw InvalidArgument("fit_mle: no data");
  if (k < 1 || k > chart.dim()) throw InvalidArgument("fit_mle: need 1 <= k <= d");
  if (init.rank() != k || init.dim() != chart.dim()) {
    throw InvalidArgument("fit_mle: initial parameters do not match k and the chart");
  }
  if (!(init.sigma > 0.0)) throw InvalidArgument("fit_mle: initial sigma must be positive");
  if (opts.max_iter < 0) throw InvalidArgument("fit_mle: max_iter must be >= 0");
  ModelParams like = init;
  like.chart = chart;
  like.validate();

  Eigen::VectorXd theta = pack_params(like);
  const Eigen::Index p = theta.size();

  PCAFit fit{like, {}, 0, false, {}};
  double best = kInf;
  Eigen::VectorXd best_theta = theta;

  for (int iter = 0;; ++iter) {
    const std::uint64_t seed = derive_seed(opts.seed, static_cast<std::uint64_t>(iter));
    const Evaluation here = evaluate(theta, like, data, opts, seed);
    if (iter == 0 && !std::isfinite(here.nll)) {
      throw EstimationError("fit_mle: non-finite likelihood at the initial parameters");
    }
    if (here.nll < best) {
      best = here.nll;
      best_theta = theta;
    }
    fit.trace.push_back(trace_entry(iter, here, theta, like, best));
    if (iter == opts.max_iter || fit.converged) break;

    // Central differences under frozen seeds give the gradient and the
    // diagonal curvature used to scale it.
    Eigen::VectorXd grad(p), curv(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      const double h = opts.fd_rel_step * std::max(1.0, std::abs(theta(i)));
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      const double fp = evaluate(tp, like, data, opts, seed).nll;
      const double fm = evaluate(tm, like, data, opts, seed).nll;
      const bool ok = std::isfinite(fp) && std::isfinite(fm);
      grad(i) = ok ? (fp - fm) / (2.0 * h) : 0.0;
      curv(i) = ok ? (fp - 2.0 * here.nll + fm) / (h * h) : 0.0;
    }
    fit.iterations = iter + 1;
    const double top = curv.maxCoeff();
    Eigen::VectorXd dir = grad;
    if (top > 0.0) dir = grad.cwiseQuotient(curv.cwiseMax(1e-3 * top));
    const double slope = grad.dot(dir);
    if (!(slope > 0.0)) {
      fit.converged = true;
      continue;
    }
    double alpha = iter == 0 ? std::min(1.0, opts.step_size / dir.norm()) : 1.0;

    // Armijo backtracking along -dir.
    bool accepted = false;
    while (alpha * dir.norm() >= 1e-10) {
      const Eigen::VectorXd trial = bound_lambdas(theta - alpha * dir, like, opts.min_lambda);
      const double f = evaluate(trial, like, data, opts, seed).nll;
      if (std::isfinite(f) && f <= here.nll - 1e-4 * alpha * slope) {
        theta = trial;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) fit.converged = true;  // step collapse
  }

  fit.params = unpack_params(best_theta, like);
  fit.eigen = factor_frame(chart.metric(fit.params.m), fit.params.W);
  return fit;
}

LatentSummary principal_paths(const ModelParams& params, const Vec& y, int n, int n_samples,
                              std::uint64_t seed) {
  if (n_samples < 1) throw InvalidArgument("principal_paths: n_samples must be >= 1");
  params.validate();
  params.chart.require_domain(y);
  const int k = params.rank();

  std::vector<BridgePath> paths(n_samples);
  parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t b) {
    paths[b] = simulate_bridge(params, y, n, derive_seed(seed, b), {false, false, true});
  });

  double max_lw = -kInf;
  for (const BridgePath& path : paths) max_lw = std::max(max_lw, path.log_weight);
  if (!std::isfinite(max_lw)) throw EstimationError("principal_paths: non-finite log weights");

  LatentSummary out;
  out.n_samples = n_samples;
  std::vector<double> w(n_samples);
  double sum = 0.0, sum_sq = 0.0;
  for (int b = 0; b < n_samples; ++b) {
    w[b] = std::exp(paths[b].log_weight - max_lw);
    sum += w[b];
    sum_sq += w[b] * w[b];
    out.rejections += paths[b].rejections;
  }
  out.ess = sum * sum / sum_sq;
  out.mean_path.assign(n + 1, Vec::Zero(k));
  for (int b = 0; b < n_samples; ++b) {
    const double wb = w[b] / sum;
    for (int j = 0; j <= n; ++j) out.mean_path[j] += wb * paths[b].latent[j];
  }
  out.endpoint = out.mean_path.back();
  out.endpoint_spread = Mat::Zero(k, k);
  for (int b = 0; b < n_samples; ++b) {
    const Vec dev = paths[b].latent_end - out.endpoint;
    out.endpoint_spread += (w[b] / sum) * dev * dev.transpose();
  }
  if (out.ess < 10.0) {
    out.warning = "importance weights are degenerate (ess " + std::to_string(out.ess) + " < 10)";
  }
  return out;
}

}  // namespace geomppca
