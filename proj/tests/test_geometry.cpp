#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "doctest.h"
#include "geomppca/geometry.hpp"

using namespace geomppca;

namespace {

Vec v2(double a, double b) { return Vec{{a, b}}; }

// Central-difference Jacobian of an embedding, independent of the library.
EmbedJacobian numeric_jacobian(const ManifoldChart& chart, const Vec& x, double h = 1e-6) {
  EmbedJacobian j(3, chart.dim());
  for (int b = 0; b < chart.dim(); ++b) {
    Vec xp = x, xm = x;
    xp(b) += h;
    xm(b) -= h;
    j.col(b) = (chart.embed(xp) - chart.embed(xm)) / (2.0 * h);
  }
  return j;
}

// Christoffels of a conformal metric lambda(q) I with lambda = 4 / (1 + |q|^2)^2,
// written directly from Gamma^a_bc = 1/2 g^{ad} (d_b g_dc + d_c g_db - d_d g_bc).
double conformal_gamma(const Vec& q, int a, int b, int c) {
  const double s = 1.0 + q.squaredNorm();
  const double lam = 4.0 / (s * s);
  auto dlam = [&](int e) { return -16.0 * q(e) / (s * s * s); };
  const double g_ad = 1.0 / lam;
  double sum = 0.0;
  sum += (a == c) ? dlam(b) : 0.0;
  sum += (a == b) ? dlam(c) : 0.0;
  sum -= (b == c) ? dlam(a) : 0.0;
  return 0.5 * g_ad * sum;
}

std::vector<Vec> random_points(int count, double radius, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(-radius, radius);
  std::vector<Vec> out;
  for (int i = 0; i < count; ++i) out.push_back(v2(u(gen), u(gen)));
  return out;
}

}  // namespace

TEST_CASE("flat chart has identity metric and zero Christoffels") {
  const ManifoldChart flat = ManifoldChart::flat(2);
  const Vec x = v2(0.3, -1.0);
  CHECK((flat.metric(x) - Mat::Identity(2, 2)).norm() == 0.0);
  const Christoffel g = flat.christoffel(x);
  for (int a = 0; a < 2; ++a) CHECK(g.symbols[a].norm() == 0.0);
  const ManifoldChart flat3 = ManifoldChart::flat(3);
  const Christoffel g3 = flat3.christoffel(Vec::Constant(3, 0.7));
  for (int a = 0; a < 3; ++a) CHECK(g3.symbols[a].norm() == 0.0);
}

TEST_CASE("sphere metric at the chart origin is 4 I and matches the embedding Jacobian") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Vec o = Vec::Zero(2);
  CHECK((s.metric(o) - 4.0 * Mat::Identity(2, 2)).norm() < 1e-15);
  const EmbedJacobian j = numeric_jacobian(s, o);
  CHECK((s.metric(o) - j.transpose() * j).norm() < 1e-8);
}

TEST_CASE("ellipsoid(1,1,1) reproduces the sphere") {
  const ManifoldChart s = ManifoldChart::sphere();
  const ManifoldChart e = ManifoldChart::ellipsoid(1.0, 1.0, 1.0);
  for (const Vec& x : random_points(20, 2.0, 11)) {
    CHECK((s.metric(x) - e.metric(x)).norm() < 1e-14);
    for (int a = 0; a < 2; ++a) {
      CHECK((s.christoffel(x).symbols[a] - e.christoffel(x).symbols[a]).norm() < 1e-12);
    }
    CHECK((s.embed(x) - e.embed(x)).norm() < 1e-15);
  }
}

TEST_CASE("metric is symmetric positive definite at random points") {
  for (const ManifoldChart& c : {ManifoldChart::sphere(), ManifoldChart::ellipsoid(1.0, 0.6, 1.4)}) {
    for (const Vec& x : random_points(50, 3.0, 5)) {
      const Mat g = c.metric(x);
      CHECK((g - g.transpose()).norm() == 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<Mat>(g).eigenvalues().minCoeff() > 0.0);
    }
  }
}

TEST_CASE("metric equals J^T J of the numeric embedding Jacobian") {
  for (const ManifoldChart& c : {ManifoldChart::sphere(), ManifoldChart::ellipsoid(1.0, 0.6, 1.4)}) {
    for (const Vec& x : random_points(100, 2.0, 17)) {
      const EmbedJacobian j = numeric_jacobian(c, x);
      CHECK((c.metric(x) - j.transpose() * j).norm() < 1e-6);
      CHECK((c.embed_jacobian(x) - j).norm() < 1e-7);
    }
  }
}

TEST_CASE("sphere Christoffels vanish at the origin and match the conformal formula") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Christoffel g0 = s.christoffel(Vec::Zero(2));
  for (int a = 0; a < 2; ++a) CHECK(g0.symbols[a].norm() == 0.0);
  for (const Vec& x : random_points(30, 2.0, 23)) {
    const Christoffel analytic = s.christoffel(x);
    const Christoffel numeric = s.christoffel_numeric(x);
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        for (int c = 0; c < 2; ++c) {
          CHECK(analytic.symbols[a](b, c) == doctest::Approx(conformal_gamma(x, a, b, c)).epsilon(1e-12));
          CHECK(std::abs(numeric.symbols[a](b, c) - conformal_gamma(x, a, b, c)) < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("Christoffels are symmetric in the lower indices and metric compatible") {
  for (const ManifoldChart& c : {ManifoldChart::sphere(), ManifoldChart::ellipsoid(1.0, 0.6, 1.4)}) {
    for (const Vec& x : random_points(25, 1.5, 29)) {
      const Christoffel gamma = c.christoffel(x);
      const Mat g = c.metric(x);
      for (int a = 0; a < 2; ++a) CHECK((gamma.symbols[a] - gamma.symbols[a].transpose()).norm() <= 1e-14 * (1.0 + gamma.symbols[a].norm()));
      const double h = 1e-5;
      for (int e = 0; e < 2; ++e) {
        Vec xp = x, xm = x;
        xp(e) += h;
        xm(e) -= h;
        const Mat dg = (c.metric(xp) - c.metric(xm)) / (2.0 * h);
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            double cov = dg(a, b);
            for (int f = 0; f < 2; ++f) {
              cov -= gamma.symbols[f](e, a) * g(f, b) + gamma.symbols[f](e, b) * g(a, f);
            }
            CHECK(std::abs(cov) < 1e-5);
          }
        }
      }
    }
  }
}

TEST_CASE("ellipsoid analytic Christoffels agree with the finite-difference path") {
  const ManifoldChart e = ManifoldChart::ellipsoid(1.0, 0.6, 1.4);
  for (const Vec& x : random_points(20, 1.5, 31)) {
    const Christoffel a = e.christoffel(x);
    const Christoffel n = e.christoffel_numeric(x);
    for (int i = 0; i < 2; ++i) CHECK((a.symbols[i] - n.symbols[i]).norm() < 1e-6);
  }
}

TEST_CASE("out-of-domain points raise DomainError") {
  const ManifoldChart s = ManifoldChart::sphere(10.0);
  CHECK_THROWS_AS(s.metric(v2(20.0, 0.0)), DomainError);
  CHECK_THROWS_AS(s.christoffel(v2(0.0, 11.0)), DomainError);
  CHECK_FALSE(s.in_domain(v2(std::nan(""), 0.0)));
  CHECK_FALSE(s.in_domain(Vec::Zero(3)));
}

TEST_CASE("sphere_exp and sphere_log") {
  const Vec3 p(0, 0, 1);
  CHECK((sphere_exp(p, Vec3::Zero()) - p).norm() == 0.0);
  CHECK(sphere_log(p, p).norm() == 0.0);

  const Vec3 q = sphere_exp(p, Vec3(std::numbers::pi / 2, 0, 0));
  const Vec3 rotated = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitY()) * p;
  CHECK((q - rotated).norm() < 1e-15);
  CHECK((q - Vec3(1, 0, 0)).norm() < 1e-15);

  CHECK_THROWS_AS(sphere_log(p, -p), DomainError);

  std::mt19937 gen(3);
  std::normal_distribution<double> n01;
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Vec3 base = Vec3(n01(gen), n01(gen), n01(gen)).normalized();
    Vec3 v(n01(gen), n01(gen), n01(gen));
    v -= v.dot(base) * base;
    v *= 2.99 * std::uniform_real_distribution<double>(0.0, 1.0)(gen) / v.norm();
    worst = std::max(worst, (sphere_log(base, sphere_exp(base, v)) - v).norm());
    // distance of exp(base, v) equals |v|
    CHECK(sphere_distance(base, sphere_exp(base, v)) == doctest::Approx(v.norm()).epsilon(1e-12));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("stereographic chart inverts the embedding; north pole is the origin") {
  CHECK((stereographic_embed(Vec::Zero(2)) - Vec3(0, 0, 1)).norm() == 0.0);
  for (const Vec& x : random_points(50, 5.0, 37)) {
    CHECK(stereographic_embed(x).norm() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK((stereographic_chart(stereographic_embed(x)) - x).norm() < 1e-12);
  }
}

TEST_CASE("chart Riemannian exp/log agree with geodesic integration") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Vec x = v2(0.2, -0.3);
  const Vec v = v2(0.4, 0.25);
  const Vec analytic = riemannian_exp(s, x, v);
  const Vec integrated = geodesic_endpoint(s, x, v, 400);
  CHECK((analytic - integrated).norm() < 1e-8);
  CHECK((riemannian_log(s, x, analytic) - v).norm() < 1e-10);

  // Ellipsoid has no analytic maps: shooting log inverts the integrated exp.
  const ManifoldChart e = ManifoldChart::ellipsoid(1.0, 0.7, 1.3);
  const Vec y = riemannian_exp(e, x, v);
  CHECK((riemannian_log(e, x, y) - v).norm() < 1e-7);
}

TEST_CASE("orthonormal_frame is g-orthonormal") {
  const ManifoldChart e = ManifoldChart::ellipsoid(1.0, 0.6, 1.4);
  for (const Vec& x : random_points(20, 2.0, 41)) {
    const Mat f = orthonormal_frame(e, x);
    CHECK((f.transpose() * e.metric(x) * f - Mat::Identity(2, 2)).norm() < 1e-12);
  }
}

TEST_CASE("BuiltinSurface parsing") {
  CHECK(BuiltinSurface::parse("sphere").make_chart().name() == "sphere");
  CHECK(BuiltinSurface::parse("flat3").make_chart().dim() == 3);
  CHECK(BuiltinSurface::parse("ellipsoid", 1.0, 0.5, 2.0).make_chart().name() == "ellipsoid");
  CHECK_THROWS_AS(BuiltinSurface::parse("torus"), InvalidArgument);
  CHECK_THROWS_AS(BuiltinSurface::parse("flat9"), InvalidArgument);
  CHECK_THROWS_AS(ManifoldChart::ellipsoid(1.0, -1.0, 1.0), InvalidArgument);
}

TEST_CASE("volume density is sqrt det G") {
  const ManifoldChart s = ManifoldChart::sphere();
  const Vec x = v2(0.5, 1.0);
  const double sq = 1.0 + x.squaredNorm();
  CHECK(s.volume_density(x) == doctest::Approx(4.0 / (sq * sq)).epsilon(1e-14));
}
