#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "geomppca/types.hpp"

namespace geomppca {

/// Default chart radius bound for the stereographic charts; keeps points away
/// from the projective point at infinity.
inline constexpr double kDefaultChartRadius = 1e3;

/// A d-dimensional manifold described by a single chart.
///
/// ManifoldChart is an immutable handle; copies share the same definition and
/// may be used concurrently.
class ManifoldChart {
 public:
  struct Definition {
    std::string name;
    int dim = 0;
    std::function<Mat(const Vec&)> metric;
    /// Optional analytic Christoffel symbols. When empty the generic central
    /// finite-difference path is used.
    std::function<Christoffel(const Vec&)> christoffel;
    /// Optional embedding into R^3 (surfaces only) and its Jacobian.
    std::function<Vec3(const Vec&)> embed;
    std::function<EmbedJacobian(const Vec&)> embed_jacobian;
    /// Optional inverse of the embedding, defined on the embedded surface.
    std::function<Vec(const Vec3&)> chart_of;
    /// Optional analytic Riemannian exponential / logarithm in chart coordinates.
    std::function<Vec(const Vec&, const Vec&)> exp_map;
    std::function<Vec(const Vec&, const Vec&)> log_map;
    /// Domain predicate; defaults to finite coordinates.
    std::function<bool(const Vec&)> in_domain;
  };

  explicit ManifoldChart(Definition def);

  static ManifoldChart flat(int d);
  /// Unit sphere, stereographic projection from the south pole.
  static ManifoldChart sphere(double chart_radius = kDefaultChartRadius);
  /// Ellipsoid with semi-axes (a, b, c): the sphere chart composed with diag(a, b, c).
  static ManifoldChart ellipsoid(double a, double b, double c,
                                 double chart_radius = kDefaultChartRadius);

  int dim() const { return def_->dim; }
  const std::string& name() const { return def_->name; }

  bool in_domain(const Vec& x) const;
  /// Throws DomainError when x is outside the chart domain.
  void require_domain(const Vec& x) const;

  Mat metric(const Vec& x) const;
  Christoffel christoffel(const Vec& x) const;
  /// Christoffel symbols from central differences of the metric (step 1e-5),
  /// regardless of whether an analytic override exists.
  Christoffel christoffel_numeric(const Vec& x, double step = 1e-5) const;

  /// sqrt(det G(x)): density of the Riemannian volume w.r.t. chart Lebesgue measure.
  double volume_density(const Vec& x) const;

  bool has_embedding() const { return static_cast<bool>(def_->embed); }
  Vec3 embed(const Vec& x) const;
  /// Analytic when available, otherwise central differences of embed.
  EmbedJacobian embed_jacobian(const Vec& x) const;
  bool has_inverse_embedding() const { return static_cast<bool>(def_->chart_of); }
  Vec chart_of(const Vec3& y) const;

  bool has_analytic_exp_log() const {
    return static_cast<bool>(def_->exp_map) && static_cast<bool>(def_->log_map);
  }
  const Definition& definition() const { return *def_; }

 private:
  std::shared_ptr<const Definition> def_;
};

/// Named built-in surfaces and their parameters.
struct BuiltinSurface {
  enum class Kind { flat, sphere, ellipsoid };
  Kind kind = Kind::sphere;
  int flat_dim = 2;
  double a = 1.0, b = 1.0, c = 1.0;

  ManifoldChart make_chart() const;
  /// Parses "flat<d>", "sphere" or "ellipsoid"; axes apply to the ellipsoid only.
  static BuiltinSurface parse(const std::string& name, double a = 1.0, double b = 1.0,
                              double c = 1.0);
  std::string name() const;
};

// Great-circle maps on the unit sphere in R^3.
Vec3 sphere_exp(const Vec3& p, const Vec3& v);
/// Throws DomainError for antipodal points (cut locus).
Vec3 sphere_log(const Vec3& p, const Vec3& q);
double sphere_distance(const Vec3& p, const Vec3& q);

/// Stereographic projection from the south pole and its inverse.
Vec3 stereographic_embed(const Vec& q);
Vec stereographic_chart(const Vec3& y);

/// Integrates the geodesic equation from (x, v) over unit time with RK4.
Vec geodesic_endpoint(const ManifoldChart& chart, const Vec& x, const Vec& v, int steps = 200);

/// Riemannian exponential in chart coordinates. Analytic when the chart
/// provides it, otherwise by geodesic integration.
Vec riemannian_exp(const ManifoldChart& chart, const Vec& x, const Vec& v);
/// Riemannian logarithm in chart coordinates. Analytic when available,
/// otherwise geodesic boundary-value shooting (Gauss-Newton). Throws
/// DomainError at the cut locus or when shooting fails.
Vec riemannian_log(const ManifoldChart& chart, const Vec& x, const Vec& y);

/// Gram-Schmidt g-orthonormalization of the chart basis at x (columns).
Mat orthonormal_frame(const ManifoldChart& chart, const Vec& x);

/// Metric-weighted pseudo-inverse (F^T G F)^{-1} F^T G of a frame F at x.
template <typename Frame>
Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, Frame::MaxColsAtCompileTime, kMaxDim>
metric_pseudo_inverse(const Mat& g, const Frame& frame) {
  const auto ft_g = (frame.transpose() * g).eval();
  return (ft_g * frame).ldlt().solve(ft_g);
}

}  // namespace geomppca
