#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "doctest.h"
#include "geomppca/baselines.hpp"
#include "geomppca/estimators.hpp"

using namespace geomppca;

namespace {

Vec v2(double a, double b) { return Vec{{a, b}}; }

Mat m2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

std::vector<Vec> gaussian_points(int n, const Mat& l, const Vec& m, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> n01;
  std::vector<Vec> out;
  for (int i = 0; i < n; ++i) {
    Vec z(l.cols());
    for (int j = 0; j < l.cols(); ++j) z(j) = n01(gen);
    out.push_back(m + l * z);
  }
  return out;
}

Eigen::VectorXd pack_state(const Vec& x, const Mat& nu) {
  Eigen::VectorXd q(x.size() + nu.size());
  q.head(x.size()) = x;
  for (Eigen::Index j = 0; j < nu.cols(); ++j) q.segment(x.size() + j * nu.rows(), nu.rows()) = nu.col(j);
  return q;
}

// Chart distance from a point to the chart image of the great circle through a and b.
double distance_to_geodesic(const ManifoldChart& s, const Vec& a, const Vec& b, const Vec& x) {
  const Vec3 p = s.embed(a);
  const Vec3 v = sphere_log(p, s.embed(b));
  double best = 1e300;
  for (int j = 0; j <= 4000; ++j) {
    const Vec g = stereographic_chart(sphere_exp(p, (j / 4000.0) * v));
    best = std::min(best, (g - x).norm());
  }
  return best;
}

}  // namespace

TEST_CASE("frame factorization") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Vec x = v2(0.4, -0.3);
  const Mat g = s.metric(x);
  const Mat w = m2(0.3, -0.2, 0.1, 0.6);
  const FrameFactorization f = factor_frame(g, w);
  CHECK(f.lambda(0) >= f.lambda(1));
  CHECK(f.lambda(1) > 0.0);
  CHECK((f.U * f.lambda.asDiagonal() * f.V.transpose() - w).norm() < 1e-13);
  CHECK((f.U.transpose() * g * f.U - Mat::Identity(2, 2)).norm() < 1e-13);
  CHECK((f.V.transpose() * f.V - Mat::Identity(2, 2)).norm() < 1e-13);
  // lambda^2 are the eigenvalues of W^T G W.
  const Eigen::SelfAdjointEigenSolver<Mat> eig(w.transpose() * g * w);
  CHECK(f.lambda(0) * f.lambda(0) == doctest::Approx(eig.eigenvalues()(1)).epsilon(1e-12));
}

TEST_CASE("parameter packing round trip") {
  const ModelParams p{ManifoldChart::sphere(), v2(0.1, 0.2), m2(0.3, 0.1, -0.2, 0.4).leftCols(1), 0.07, 1.0};
  const ModelParams q = unpack_params(pack_params(p), p);
  CHECK((q.m - p.m).norm() == 0.0);
  CHECK((q.W - p.W).norm() == 0.0);
  CHECK(q.sigma == doctest::Approx(p.sigma).epsilon(1e-15));
}

TEST_CASE("fit_mle on flat data approaches closed-form PPCA") {
  const ManifoldChart flat = ManifoldChart::flat(2);
  const auto data = gaussian_points(100, m2(1.0, 0.0, 0.5, 0.2), v2(0.3, -0.1), 4);
  Eigen::MatrixXd raw(100, 2);
  for (int i = 0; i < 100; ++i) raw.row(i) = data[i].transpose();
  const EuclideanPPCAFit ppca = ppca_fit(raw, 1);

  Mat w0(2, 1);
  w0 << 0.7, 0.0;
  const ModelParams init{flat, Vec::Zero(2), w0, 0.4, 1.0};
  FitOptions opts;
  opts.n = 10;
  opts.n_samples = 200;
  opts.max_iter = 40;
  opts.step_size = 0.1;
  opts.seed = 3;
  const PCAFit fit = fit_mle(data, flat, 1, init, opts);

  REQUIRE(!fit.trace.empty());
  for (std::size_t i = 1; i < fit.trace.size(); ++i) {
    CHECK(fit.trace[i].best_neg_log_lik <= fit.trace[i - 1].best_neg_log_lik);
  }
  CHECK(fit.trace.back().neg_log_lik < fit.trace.front().neg_log_lik);
  const Mat wwt = fit.params.W * fit.params.W.transpose();
  const Eigen::MatrixXd ref = ppca.W_ml * ppca.W_ml.transpose();
  CHECK((fit.params.m - ppca.m).norm() < 0.05 * ppca.m.norm() + 0.02);
  CHECK((wwt - ref).norm() < 0.1 * ref.norm());
  CHECK(std::abs(fit.params.sigma * fit.params.sigma / ppca.sigma2_ml - 1.0) < 0.2);
  CHECK(fit.eigen.lambda(0) > 0.0);
}

TEST_CASE("fit_mle spectrum is invariant to rotating the initial W") {
  const ManifoldChart flat = ManifoldChart::flat(3);
  Mat l(3, 3);
  l << 0.8, 0.0, 0.0, 0.3, 0.5, 0.0, 0.1, 0.2, 0.15;
  const auto data = gaussian_points(40, l, Vec::Zero(3), 6);
  Mat w0(3, 2);
  w0 << 0.6, 0.1, 0.0, 0.5, 0.2, 0.0;
  const double a = 0.9;
  const Mat r = m2(std::cos(a), -std::sin(a), std::sin(a), std::cos(a));
  FitOptions opts;
  opts.n = 10;
  opts.n_samples = 200;
  opts.max_iter = 60;
  opts.seed = 1;
  const PCAFit f1 = fit_mle(data, flat, 2, ModelParams{flat, Vec::Zero(3), w0, 0.2, 1.0}, opts);
  const PCAFit f2 = fit_mle(data, flat, 2, ModelParams{flat, Vec::Zero(3), w0 * r, 0.2, 1.0}, opts);
  INFO(f1.eigen.lambda.transpose(), " / ", f2.eigen.lambda.transpose(), " iters ", f1.iterations, " ", f2.iterations, " conv ", f1.converged, f2.converged);
  for (int i = 0; i < 2; ++i) CHECK(std::abs(f1.eigen.lambda(i) / f2.eigen.lambda(i) - 1.0) < 0.05);
  CHECK(std::abs(f1.params.sigma / f2.params.sigma - 1.0) < 0.05);
}

TEST_CASE("fit_mle error handling") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Mat w = frame_from_variances(s, Vec::Zero(2), {0.4}, 0.0);
  const ModelParams init{s, Vec::Zero(2), w, 0.1, 1.0};
  const std::vector<Vec> data{v2(0.1, 0.0)};
  FitOptions opts;
  opts.max_iter = 0;
  opts.n_samples = 10;
  opts.n = 10;
  CHECK_THROWS_AS(fit_mle(std::vector<Vec>{}, s, 1, init, opts), InvalidArgument);
  CHECK_THROWS_AS(fit_mle(data, s, 2, init, opts), InvalidArgument);
  ModelParams zero_sigma = init;
  zero_sigma.sigma = 0.0;
  CHECK_THROWS_AS(fit_mle(data, s, 1, zero_sigma, opts), InvalidArgument);
  const PCAFit none = fit_mle(data, s, 1, init, opts);
  CHECK(none.trace.size() == 1);
  CHECK(none.iterations == 0);
}

TEST_CASE("finite-difference gradient of the frozen-seed likelihood is self-consistent") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Vec m = Vec::Zero(2);
  const ModelParams p{s, m, frame_from_variances(s, m, {0.4}, 0.2), 0.1, 1.0};
  const SampleSet set = forward_samples(p, 8, 50, 2, false);
  const Eigen::VectorXd theta = pack_params(p);
  auto nll = [&](const Eigen::VectorXd& t) {
    return -log_likelihood(unpack_params(t, p), set.endpoints, 50, 1000, 77).value;
  };
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double h = 1e-3 * std::max(1.0, std::abs(theta(i)));
    Eigen::VectorXd e = Eigen::VectorXd::Zero(theta.size());
    e(i) = 1.0;
    const double g1 = (nll(theta + h * e) - nll(theta - h * e)) / (2 * h);
    const double g2 = (nll(theta + 0.5 * h * e) - nll(theta - 0.5 * h * e)) / h;
    CAPTURE(i);
    CHECK(std::abs(g1 - g2) <= 0.05 * std::abs(g1) + 1e-6);
  }
}

TEST_CASE("principal paths on flat space") {
  const ManifoldChart flat = ManifoldChart::flat(2);
  const ModelParams p{flat, v2(0.2, 0.1), Mat::Identity(2, 2), 1e-3, 1.0};
  const Vec y = v2(1.0, -0.6);
  const int n = 50;
  const LatentSummary sum = principal_paths(p, y, n, 2000, 5);
  REQUIRE(sum.mean_path.size() == static_cast<std::size_t>(n + 1));
  CHECK(sum.mean_path.front().norm() == 0.0);
  CHECK(sum.ess <= 2000.0);
  CHECK_FALSE(sum.warning);
  double worst = 0.0, bound = 1e300;
  for (int j = 0; j <= n; ++j) {
    const double t = static_cast<double>(j) / n;
    worst = std::max(worst, (sum.mean_path[j] - t * (y - p.m)).cwiseAbs().maxCoeff());
  }
  // Brownian bridge variance peaks at 1/4.
  bound = 3.0 * std::sqrt(0.25 / sum.ess) * std::sqrt(2.0);
  CHECK(worst < bound);
  CHECK((sum.endpoint - (y - p.m)).norm() < 1e-2);
  CHECK(sum.endpoint_spread.diagonal().maxCoeff() < 1e-4);

  const LatentSummary few = principal_paths(p, y, 10, 5, 1);
  CHECK(few.warning);
}

TEST_CASE("principal paths on the sphere spread their endpoints") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Vec m = Vec::Zero(2);
  const ManifoldChart e = ManifoldChart::flat(2);
  // Same variances along the axes of each chart.
  const ModelParams sphere{s, m, frame_from_variances(s, m, {0.5, 0.1}, 0.0), 1e-3, 1.0};
  const ModelParams flat{e, m, frame_from_variances(e, m, {0.5, 0.1}, 0.0), 1e-3, 1.0};
  const Vec y = v2(0.35, 0.2);
  const LatentSummary a = principal_paths(sphere, y, 100, 2000, 3);
  const LatentSummary b = principal_paths(flat, y, 100, 2000, 3);
  CHECK(a.endpoint_spread.diagonal().minCoeff() > 10.0 * b.endpoint_spread.diagonal().minCoeff());
}

TEST_CASE("MPP vector field is Hamiltonian") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Eigen::VectorXd q = pack_state(v2(0.3, -0.4), m2(0.5, 0.1, -0.2, 0.7));
  Eigen::VectorXd p(6);
  p << 0.3, -0.2, 0.5, 0.1, -0.4, 0.2;
  const auto [qdot, pdot] = mpp_vector_field(s, q, p);
  const double h = 1e-6;
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(6);
    e(i) = h;
    const double dhdp = (mpp_hamiltonian(s, q, p + e) - mpp_hamiltonian(s, q, p - e)) / (2 * h);
    const double dhdq = (mpp_hamiltonian(s, q + e, p) - mpp_hamiltonian(s, q - e, p)) / (2 * h);
    CHECK(std::abs(qdot(i) - dhdp) < 1e-7);
    CHECK(std::abs(pdot(i) + dhdq) < 1e-7);
  }
}

TEST_CASE("MPP shooting on flat space is a straight line") {
  const ManifoldChart flat = ManifoldChart::flat(2);
  const FramePoint u{flat, v2(0.1, -0.2), m2(2.0, 0.3, 0.1, 1.0)};
  const Vec y = v2(1.0, 0.5);
  const MppResult r = mpp_shoot(u, y, {100, 50, 1e-12, std::nullopt});
  const double exact = (u.nu.fullPivLu().solve(y - u.x)).squaredNorm();
  CHECK(std::abs(r.sq_distance - exact) < 1e-10);
  double off_line = 0.0;
  const Vec dir = (y - u.x).normalized();
  for (const FramePoint& pt : r.path) {
    const Vec rel = pt.x - u.x;
    off_line = std::max(off_line, (rel - rel.dot(dir) * dir).norm());
  }
  CHECK(off_line < 1e-10);
  CHECK(r.endpoint_residual < 1e-10);
  CHECK(std::abs(r.sq_distance - 2.0 * mpp_hamiltonian(flat, pack_state(u.x, u.nu), r.initial_momentum)) < 1e-14);
}

TEST_CASE("MPP on the sphere") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Vec o = v2(0.1, 0.05);
  const Mat r = orthonormal_frame(s, o);
  const Vec y = v2(0.5, 0.3);
  const MppOptions opts{1000, 50, 1e-10, std::nullopt};

  SUBCASE("orthonormal frame follows the geodesic") {
    const MppResult res = mpp_shoot(FramePoint{s, o, r}, y, opts);
    const double geo = sphere_distance(s.embed(o), s.embed(y));
    CHECK(std::abs(res.sq_distance - geo * geo) < 1e-4);
    CHECK(res.hamiltonian_drift < 1e-6);
    double off = 0.0;
    for (std::size_t j = 0; j < res.path.size(); j += 50) off = std::max(off, distance_to_geodesic(s, o, y, res.path[j].x));
    CHECK(off < 1e-3);
  }

  SUBCASE("anisotropic frame deviates from the geodesic") {
    Mat a = r;
    a.col(0) *= 2.0;
    const MppResult res = mpp_shoot(FramePoint{s, o, a}, y, opts);
    CHECK(res.hamiltonian_drift < 1e-6);
    double off = 0.0;
    for (const FramePoint& pt : res.path) off = std::max(off, distance_to_geodesic(s, o, y, pt.x));
    CHECK(off > 1e-2);
  }

  SUBCASE("shooting failure reports the best residual") {
    MppOptions bad = opts;
    bad.steps = 100;
    bad.max_iter = 0;
    Eigen::VectorXd p0 = Eigen::VectorXd::Zero(6);
    p0(0) = -3.0;
    bad.initial_momentum = p0;
    // With a warm start the flat guess is also tried; zero iterations still
    // leave a curvature residual.
    try {
      mpp_shoot(FramePoint{s, o, r}, y, bad);
      FAIL("expected ShootingError");
    } catch (const ShootingError& e) {
      CHECK(e.best_residual > 0.0);
    }
  }
}

TEST_CASE("MPP estimator on flat data recovers the Gaussian MLE") {
  const ManifoldChart flat = ManifoldChart::flat(2);
  const auto data = gaussian_points(500, m2(1.0, 0.0, 0.4, 0.5), v2(0.3, 0.0), 7);
  Eigen::MatrixXd raw(500, 2);
  for (int i = 0; i < 500; ++i) raw.row(i) = data[i].transpose();
  const Eigen::VectorXd mean = raw.colwise().mean().transpose();
  const Eigen::MatrixXd centered = raw.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / 500.0;

  MppEstimateOptions opts;
  opts.shoot.steps = 10;
  const MppEstimate est = mpp_estimate(data, flat, FramePoint{flat, Vec::Zero(2), Mat::Identity(2, 2)}, opts);
  CHECK(est.converged);
  CHECK_FALSE(est.hit_lower_bound);
  CHECK((est.u.x - mean).norm() < 0.01 * mean.norm());
  CHECK((est.u.nu * est.u.nu.transpose() - cov).norm() < 0.01 * cov.norm());
  for (std::size_t i = 1; i < est.objective_trace.size(); ++i) {
    CHECK(est.objective_trace[i] <= est.objective_trace[i - 1]);
  }

  const std::vector<Vec> single{data[0]};
  const MppEstimate one = mpp_estimate(single, flat, FramePoint{flat, Vec::Zero(2), Mat::Identity(2, 2)}, opts);
  CHECK(one.hit_lower_bound);
  CHECK(factor_frame(Mat::Identity(2, 2), one.u.nu).lambda.minCoeff() == doctest::Approx(opts.min_lambda));
}

TEST_CASE("MPP and MLE agree for concentrated sphere data") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Vec m = v2(0.1, -0.05);
  const Mat w = frame_from_variances(s, m, {0.08, 0.03}, 0.3);
  const ModelParams truth{s, m, w, 0.0, 1.0};
  const SampleSet set = forward_samples(truth, 40, 50, 12, false);

  MppEstimateOptions mopts;
  mopts.shoot.steps = 50;
  const Mat nu0 = frame_from_variances(s, m, {0.05, 0.05}, 0.0);
  const MppEstimate mpp = mpp_estimate(set.endpoints, s, FramePoint{s, m, nu0}, mopts);

  FitOptions fopts;
  fopts.n = 20;
  fopts.n_samples = 300;
  fopts.max_iter = 25;
  fopts.seed = 4;
  const PCAFit mle = fit_mle(set.endpoints, s, 2, ModelParams{s, m, nu0, 1e-3, 1.0}, fopts);

  const FrameFactorization fm = factor_frame(s.metric(mpp.u.x), mpp.u.nu);
  const Mat cov_mle = mle.params.W * mle.params.W.transpose() +
                      mle.params.sigma * mle.params.sigma * s.metric(mle.params.m).inverse();
  const Mat g = s.metric(mle.params.m);
  const Eigen::SelfAdjointEigenSolver<Mat> eig(g * cov_mle);  // g-spectrum of the MLE covariance
  for (int i = 0; i < 2; ++i) {
    const double lam_mpp = fm.lambda(i) * fm.lambda(i);
    const double lam_mle = eig.eigenvalues()(1 - i);
    CAPTURE(i);
    CHECK(std::abs(lam_mpp / lam_mle - 1.0) < 0.15);
  }
  CHECK((mpp.u.x - mle.params.m).norm() < 0.15 * std::sqrt(0.08));
}
