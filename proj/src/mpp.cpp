#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/LU>
#include <Eigen/QR>

#include "geomppca/estimators.hpp"

namespace geomppca {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct State {
  Vec x;
  Mat nu;
  Vec px;
  Mat pnu;

  State operator+(const State& o) const { return {x + o.x, nu + o.nu, px + o.px, pnu + o.pnu}; }
  State operator*(double s) const { return {x * s, nu * s, px * s, pnu * s}; }
};

Vec momentum_h(const Christoffel& gamma, const State& s) {
  const int k = static_cast<int>(s.nu.cols());
  Vec h(k);
  for (int i = 0; i < k; ++i) {
    const Vec nu_i = s.nu.col(i);
    h(i) = s.px.dot(nu_i) - s.pnu.cwiseProduct(gamma.apply(nu_i, s.nu)).sum();
  }
  return h;
}

State rate(const ManifoldChart& chart, const State& s) {
  const int d = chart.dim();
  const int k = static_cast<int>(s.nu.cols());
  const Christoffel gamma = chart.christoffel(s.x);
  const Vec h = momentum_h(gamma, s);

  std::array<Christoffel, kMaxDim> dgamma;
  constexpr double step = 1e-5;
  for (int e = 0; e < d; ++e) {
    Vec xp = s.x, xm = s.x;
    xp(e) += step;
    xm(e) -= step;
    const Christoffel gp = chart.christoffel(xp);
    const Christoffel gm = chart.christoffel(xm);
    dgamma[e].dim = d;
    for (int a = 0; a < d; ++a) dgamma[e].symbols[a] = (gp.symbols[a] - gm.symbols[a]) / (2.0 * step);
  }

  Vec b = Vec::Zero(d);
  for (int a = 0; a < d; ++a) b += gamma.symbols[a] * (s.nu * s.pnu.row(a).transpose());

  State out{s.nu * h, Mat::Zero(d, k), Vec::Zero(d), Mat::Zero(d, k)};
  for (int i = 0; i < k; ++i) {
    const Vec nu_i = s.nu.col(i);
    out.nu -= h(i) * gamma.apply(nu_i, s.nu);
    for (int e = 0; e < d; ++e) {
      out.px(e) += h(i) * s.pnu.cwiseProduct(dgamma[e].apply(nu_i, s.nu)).sum();
    }
    Mat dh = Mat::Zero(d, k);
    dh.col(i) = s.px - b;
    for (int a = 0; a < d; ++a) dh -= (gamma.symbols[a] * nu_i) * s.pnu.row(a);
    out.pnu -= h(i) * dh;
  }
  return out;
}

State rk4_step(const ManifoldChart& chart, const State& s, double dt) {
  const State k1 = rate(chart, s);
  const State k2 = rate(chart, s + k1 * (0.5 * dt));
  const State k3 = rate(chart, s + k2 * (0.5 * dt));
  const State k4 = rate(chart, s + k3 * dt);
  return s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
}

Eigen::VectorXd pack_q(const Vec& x, const Mat& nu) {
  const int d = static_cast<int>(x.size());
  Eigen::VectorXd q(d + nu.size());
  q.head(d) = x;
  q.tail(nu.size()) = Eigen::Map<const Eigen::VectorXd>(Mat(nu).data(), nu.size());
  return q;
}

State unpack_state(int d, int k, const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
  if (q.size() != d + d * k || p.size() != d + d * k) {
    throw InvalidArgument("mpp: q and p must have d + d*k entries");
  }
  State s;
  s.x = q.head(d);
  s.nu = Eigen::Map<const Eigen::MatrixXd>(q.data() + d, d, k);
  s.px = p.head(d);
  s.pnu = Eigen::Map<const Eigen::MatrixXd>(p.data() + d, d, k);
  return s;
}

int rank_of(int d, Eigen::Index size) {
  const Eigen::Index k = (size - d) / d;
  if (d < 1 || k < 1 || k > kMaxDim || d + d * k != size) {
    throw InvalidArgument("mpp: state size does not match the chart dimension");
  }
  return static_cast<int>(k);
}

struct Flow {
  std::vector<State> states;
  bool ok = true;
};

Flow integrate(const ManifoldChart& chart, State s, int steps, bool keep) {
  Flow flow;
  const double dt = 1.0 / steps;
  if (keep) flow.states.reserve(steps + 1);
  if (keep) flow.states.push_back(s);
  for (int j = 0; j < steps; ++j) {
    s = rk4_step(chart, s, dt);
    if (!chart.in_domain(s.x) || !s.nu.allFinite() || !s.px.allFinite() || !s.pnu.allFinite()) {
      flow.ok = false;
      return flow;
    }
    if (keep) flow.states.push_back(s);
  }
  if (!keep) flow.states.push_back(s);
  return flow;
}

State initial_state(const FramePoint& u, const Eigen::VectorXd& p0) {
  const int d = u.dim();
  State s{u.x, u.nu, p0.head(d), Eigen::Map<const Eigen::MatrixXd>(p0.data() + d, d, u.rank())};
  return s;
}

// Flat-space solution: p_x = (nu nu^T)^{-1} (y - x), p_nu = p_x p_x^T nu.
Eigen::VectorXd flat_guess(const FramePoint& u, const Vec& y) {
  const int d = u.dim();
  const Vec px = (u.nu * u.nu.transpose()).fullPivLu().solve(y - u.x);
  const Mat pnu = px * px.transpose() * u.nu;
  Eigen::VectorXd p0(d + pnu.size());
  p0.head(d) = px;
  p0.tail(pnu.size()) = Eigen::Map<const Eigen::VectorXd>(pnu.data(), pnu.size());
  return p0;
}

Eigen::VectorXd shooting_residual(const FramePoint& u, const Vec& y, const Eigen::VectorXd& p0, int steps) {
  const int d = u.dim();
  const Flow flow = integrate(u.chart, initial_state(u, p0), steps, false);
  Eigen::VectorXd r(p0.size());
  if (!flow.ok) {
    r.setConstant(kInf);
    return r;
  }
  const State& end = flow.states.back();
  r.head(d) = end.x - y;
  r.tail(end.pnu.size()) = Eigen::Map<const Eigen::VectorXd>(Mat(end.pnu).data(), end.pnu.size());
  return r;
}

double residual_norm(const Eigen::VectorXd& r) {
  return r.allFinite() ? r.norm() : kInf;
}

}  // namespace

double mpp_hamiltonian(const ManifoldChart& chart, const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
  const int d = chart.dim();
  const State s = unpack_state(d, rank_of(d, q.size()), q, p);
  return 0.5 * momentum_h(chart.christoffel(s.x), s).squaredNorm();
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> mpp_vector_field(const ManifoldChart& chart,
                                                             const Eigen::VectorXd& q,
                                                             const Eigen::VectorXd& p) {
  const int d = chart.dim();
  const State s = unpack_state(d, rank_of(d, q.size()), q, p);
  const State r = rate(chart, s);
  return {pack_q(r.x, r.nu), pack_q(r.px, r.pnu)};
}

MppResult mpp_shoot(const FramePoint& u, const Vec& y, const MppOptions& opts) {
  u.validate();
  const int d = u.dim();
  if (u.rank() != d) throw InvalidArgument("mpp_shoot: the frame must have k = d");
  if (y.size() != d) throw InvalidArgument("mpp_shoot: target dimension mismatch");
  u.chart.require_domain(y);
  if (opts.steps < 1 || opts.max_iter < 0) throw InvalidArgument("mpp_shoot: invalid options");

  Eigen::VectorXd p0 = opts.initial_momentum ? *opts.initial_momentum : flat_guess(u, y);
  if (p0.size() != d + d * d) throw InvalidArgument("mpp_shoot: initial momentum has wrong size");

  Eigen::VectorXd r = shooting_residual(u, y, p0, opts.steps);
  double err = residual_norm(r);
  if (opts.initial_momentum) {
    const Eigen::VectorXd alt = flat_guess(u, y);
    const Eigen::VectorXd ra = shooting_residual(u, y, alt, opts.steps);
    if (residual_norm(ra) < err) {
      p0 = alt;
      r = ra;
      err = residual_norm(ra);
    }
  }
  // Momentum residuals scale with the momentum itself.
  const auto tolerance = [&] { return opts.tolerance * std::max(1.0, p0.norm()); };
  int iter = 0;
  while (err > tolerance() && iter < opts.max_iter && std::isfinite(err)) {
    ++iter;
    const Eigen::Index n = p0.size();
    Eigen::MatrixXd jac(n, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const double h = 1e-7 * std::max(1.0, std::abs(p0(c)));
      Eigen::VectorXd pp = p0, pm = p0;
      pp(c) += h;
      pm(c) -= h;
      jac.col(c) = (shooting_residual(u, y, pp, opts.steps) - shooting_residual(u, y, pm, opts.steps)) / (2.0 * h);
    }
    if (!jac.allFinite()) break;
    const Eigen::VectorXd delta = jac.colPivHouseholderQr().solve(-r);
    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      const Eigen::VectorXd trial = p0 + t * delta;
      const Eigen::VectorXd rt = shooting_residual(u, y, trial, opts.steps);
      const double et = residual_norm(rt);
      if (et < err) {
        p0 = trial;
        r = rt;
        err = et;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (!(err <= tolerance())) {
    throw ShootingError("mpp_shoot: no convergence after " + std::to_string(iter) +
                            " iterations (best residual " + std::to_string(err) + ")",
                        err);
  }

  const Flow flow = integrate(u.chart, initial_state(u, p0), opts.steps, true);
  MppResult out;
  out.initial_momentum = p0;
  out.iterations = iter;
  out.endpoint_residual = (flow.states.back().x - y).norm();
  const double h0 = 0.5 * momentum_h(u.chart.christoffel(u.x), flow.states.front()).squaredNorm();
  out.sq_distance = 2.0 * h0;
  out.path.reserve(flow.states.size());
  for (const State& s : flow.states) {
    out.path.push_back({u.chart, s.x, s.nu});
    const double hs = 0.5 * momentum_h(u.chart.christoffel(s.x), s).squaredNorm();
    const double drift = h0 > 0.0 ? std::abs(hs - h0) / h0 : std::abs(hs);
    out.hamiltonian_drift = std::max(out.hamiltonian_drift, drift);
  }
  return out;
}

namespace {

struct MppObjective {
  double value = kInf;
  std::vector<Eigen::VectorXd> momenta;
  int failed_datum = -1;
  std::string failure;
};

FramePoint frame_from_theta(const ManifoldChart& chart, const Eigen::VectorXd& theta) {
  const int d = chart.dim();
  FramePoint u{chart, theta.head(d), Eigen::Map<const Eigen::MatrixXd>(theta.data() + d, d, d)};
  return u;
}

MppObjective mpp_objective(std::span<const Vec> data, const ManifoldChart& chart, const Eigen::VectorXd& theta,
                           const std::vector<Eigen::VectorXd>& warm, const MppOptions& shoot) {
  MppObjective out;
  const FramePoint u = frame_from_theta(chart, theta);
  if (!chart.in_domain(u.x)) {
    out.failure = "base point outside the chart";
    return out;
  }
  const double vol = frame_volume(u);
  if (!(vol > 0.0)) {
    out.failure = "degenerate frame";
    return out;
  }
  double total = 2.0 * static_cast<double>(data.size()) * std::log(vol);
  out.momenta.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    MppOptions o = shoot;
    if (i < warm.size() && warm[i].size() > 0) o.initial_momentum = warm[i];
    try {
      const MppResult r = mpp_shoot(u, data[i], o);
      total += r.sq_distance;
      out.momenta[i] = r.initial_momentum;
    } catch (const EstimationError& e) {
      out.failed_datum = static_cast<int>(i);
      out.failure = e.what();
      return out;
    } catch (const DomainError& e) {
      out.failed_datum = static_cast<int>(i);
      out.failure = e.what();
      return out;
    }
  }
  out.value = total;
  return out;
}

// Clamps the g-singular values of the frame at min_lambda; reports whether any clamped.
Eigen::VectorXd clamp_frame(const ManifoldChart& chart, const Eigen::VectorXd& theta, double min_lambda,
                            bool* clamped) {
  const int d = chart.dim();
  FramePoint u = frame_from_theta(chart, theta);
  if (clamped) *clamped = false;
  if (!chart.in_domain(u.x)) return theta;
  const Mat g = chart.metric(u.x);
  const FrameFactorization f = factor_frame(g, u.nu);
  if (f.lambda.minCoeff() > min_lambda) return theta;
  if (clamped) *clamped = true;
  Mat basis = f.U;
  const Mat ortho = orthonormal_frame(chart, u.x);
  for (int i = 0; i < d; ++i) {
    if (f.lambda(i) > 0.0) continue;
    Vec c = ortho.col(i);
    for (int j = 0; j < i; ++j) c -= basis.col(j).dot(g * c) * basis.col(j);
    basis.col(i) = c / std::sqrt(c.dot(g * c));
  }
  u.nu = basis * f.lambda.cwiseMax(min_lambda).asDiagonal() * f.V.transpose();
  return pack_q(u.x, u.nu);
}

}  // namespace

MppEstimate mpp_estimate(std::span<const Vec> data, const ManifoldChart& chart, const FramePoint& init,
                         const MppEstimateOptions& opts) {
  if (data.empty()) throw InvalidArgument("mpp_estimate: no data");
  init.validate();
  if (init.rank() != chart.dim()) throw InvalidArgument("mpp_estimate: the frame must have k = d");
  for (const Vec& y : data) chart.require_domain(y);

  Eigen::VectorXd theta = clamp_frame(chart, pack_q(init.x, init.nu), opts.min_lambda, nullptr);
  const Eigen::Index p = theta.size();

  MppEstimate out{init, {}, 0, false, false};
  MppObjective here = mpp_objective(data, chart, theta, {}, opts.shoot);
  if (!std::isfinite(here.value)) {
    throw EstimationError("mpp_estimate: shooting failed for datum " + std::to_string(here.failed_datum) +
                          ": " + here.failure);
  }
  out.objective_trace.push_back(here.value);

  Eigen::VectorXd prev_theta, prev_grad;
  bool clamped = false;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    Eigen::VectorXd grad(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      const double h = opts.fd_step * std::max(1.0, std::abs(theta(i)));
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      const double fp = mpp_objective(data, chart, tp, here.momenta, opts.shoot).value;
      const double fm = mpp_objective(data, chart, tm, here.momenta, opts.shoot).value;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        const MppObjective& bad = std::isfinite(fp) ? mpp_objective(data, chart, tm, here.momenta, opts.shoot)
                                                    : mpp_objective(data, chart, tp, here.momenta, opts.shoot);
        throw EstimationError("mpp_estimate: shooting failed for datum " + std::to_string(bad.failed_datum) +
                              ": " + bad.failure);
      }
      grad(i) = (fp - fm) / (2.0 * h);
    }

    // Barzilai-Borwein step, falling back to a unit-length first step.
    double alpha = 1.0 / std::max(1.0, grad.norm());
    if (prev_grad.size() == p) {
      const Eigen::VectorXd s = theta - prev_theta;
      const Eigen::VectorXd yk = grad - prev_grad;
      const double sy = s.dot(yk);
      if (sy > 0.0) alpha = s.squaredNorm() / sy;
    }

    bool accepted = false;
    Eigen::VectorXd next;
    MppObjective trial;
    for (int ls = 0; ls < 50; ++ls, alpha *= 0.5) {
      next = clamp_frame(chart, theta - alpha * grad, opts.min_lambda, &clamped);
      trial = mpp_objective(data, chart, next, here.momenta, opts.shoot);
      const double decrease = grad.dot(theta - next);
      if (std::isfinite(trial.value) && trial.value <= here.value - 1e-4 * decrease) {
        accepted = true;
        break;
      }
    }
    out.iterations = iter + 1;
    if (!accepted) {
      out.converged = true;
      break;
    }
    if (clamped) {
      // The volume term dominates: the objective decreases without bound as a
      // singular value shrinks, so stop at the lower bound.
      theta = next;
      here = std::move(trial);
      out.objective_trace.push_back(here.value);
      out.hit_lower_bound = true;
      break;
    }
    const double moved = (next - theta).norm();
    prev_theta = theta;
    prev_grad = grad;
    theta = next;
    here = std::move(trial);
    out.objective_trace.push_back(here.value);
    if (moved < opts.tolerance) {
      out.converged = true;
      break;
    }
  }

  out.u = frame_from_theta(chart, theta);
  const FrameFactorization f = factor_frame(chart.metric(out.u.x), out.u.nu);
  out.hit_lower_bound = out.hit_lower_bound || f.lambda.minCoeff() <= opts.min_lambda * (1.0 + 1e-9);
  return out;
}

}  // namespace geomppca
