#include "geomppca/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <Eigen/LU>

namespace geomppca {

namespace {

bool all_finite(const Vec& x) { return x.allFinite(); }

// Second derivatives d^2 F_i / dq_b dq_c of the stereographic embedding.
std::array<Mat, 3> stereographic_hessians(const Vec& q) {
  const double s = 1.0 + q.squaredNorm();
  const double s2 = s * s;
  const double s3 = s2 * s;
  std::array<Mat, 3> h;
  for (int i = 0; i < 2; ++i) {
    h[i] = Mat::Zero(2, 2);
    for (int b = 0; b < 2; ++b) {
      for (int c = 0; c < 2; ++c) {
        const double dib = i == b ? 1.0 : 0.0;
        const double dic = i == c ? 1.0 : 0.0;
        const double dbc = b == c ? 1.0 : 0.0;
        h[i](b, c) = -4.0 * (dib * q(c) + dic * q(b) + q(i) * dbc) / s2 +
                     16.0 * q(i) * q(b) * q(c) / s3;
      }
    }
  }
  h[2] = Mat::Zero(2, 2);
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 2; ++c) {
      h[2](b, c) = -4.0 * (b == c ? 1.0 : 0.0) / s2 + 16.0 * q(b) * q(c) / s3;
    }
  }
  return h;
}

EmbedJacobian stereographic_jacobian(const Vec& q) {
  const double s = 1.0 + q.squaredNorm();
  EmbedJacobian j(3, 2);
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < 2; ++i) {
      j(i, b) = 2.0 * (i == b ? 1.0 : 0.0) / s - 4.0 * q(i) * q(b) / (s * s);
    }
    j(2, b) = -4.0 * q(b) / (s * s);
  }
  return j;
}

std::function<bool(const Vec&)> radius_domain(double radius) {
  return [radius](const Vec& x) { return x.allFinite() && x.norm() < radius; };
}

}  // namespace

// ---------------------------------------------------------------------------
// ManifoldChart

ManifoldChart::ManifoldChart(Definition def) {
  if (def.dim < 1 || def.dim > kMaxDim) {
    throw InvalidArgument("chart dimension must be in [1, " + std::to_string(kMaxDim) + "]");
  }
  if (!def.metric) throw InvalidArgument("chart '" + def.name + "' has no metric");
  def_ = std::make_shared<const Definition>(std::move(def));
}

ManifoldChart ManifoldChart::flat(int d) {
  Definition def;
  def.name = "flat" + std::to_string(d);
  def.dim = d;
  def.metric = [d](const Vec&) -> Mat { return Mat::Identity(d, d); };
  def.christoffel = [d](const Vec&) { return Christoffel::zero(d); };
  def.exp_map = [](const Vec& x, const Vec& v) -> Vec { return x + v; };
  def.log_map = [](const Vec& x, const Vec& y) -> Vec { return y - x; };
  if (d == 2) {
    def.embed = [](const Vec& x) { return Vec3(x(0), x(1), 0.0); };
    def.embed_jacobian = [](const Vec&) {
      EmbedJacobian j = EmbedJacobian::Zero(3, 2);
      j(0, 0) = 1.0;
      j(1, 1) = 1.0;
      return j;
    };
    def.chart_of = [](const Vec3& y) -> Vec { return Vec{{y(0), y(1)}}; };
  }
  return ManifoldChart(std::move(def));
}

ManifoldChart ManifoldChart::sphere(double chart_radius) {
  Definition def;
  def.name = "sphere";
  def.dim = 2;
  def.in_domain = radius_domain(chart_radius);
  def.metric = [](const Vec& q) -> Mat {
    const double s = 1.0 + q.squaredNorm();
    return (4.0 / (s * s)) * Mat::Identity(2, 2);
  };
  // Conformal metric lambda(q) I with d log(lambda) = -4 q / (1 + |q|^2).
  def.christoffel = [](const Vec& q) {
    const double s = 1.0 + q.squaredNorm();
    const Vec dlog = (-4.0 / s) * q;
    Christoffel c = Christoffel::zero(2);
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        for (int e = 0; e < 2; ++e) {
          double v = 0.0;
          if (a == b) v += dlog(e);
          if (a == e) v += dlog(b);
          if (b == e) v -= dlog(a);
          c.symbols[a](b, e) = 0.5 * v;
        }
      }
    }
    return c;
  };
  def.embed = [](const Vec& q) { return stereographic_embed(q); };
  def.embed_jacobian = [](const Vec& q) { return stereographic_jacobian(q); };
  def.chart_of = [](const Vec3& y) { return stereographic_chart(y); };
  def.exp_map = [](const Vec& x, const Vec& v) -> Vec {
    return stereographic_chart(
        sphere_exp(stereographic_embed(x), stereographic_jacobian(x) * v));
  };
  def.log_map = [](const Vec& x, const Vec& y) -> Vec {
    const Vec3 t = sphere_log(stereographic_embed(x), stereographic_embed(y));
    // The stereographic Jacobian has orthogonal columns of equal norm 2/s.
    const EmbedJacobian j = stereographic_jacobian(x);
    return (j.transpose() * j).ldlt().solve(j.transpose() * t);
  };
  return ManifoldChart(std::move(def));
}

ManifoldChart ManifoldChart::ellipsoid(double a, double b, double c, double chart_radius) {
  if (!(a > 0.0 && b > 0.0 && c > 0.0)) {
    throw InvalidArgument("ellipsoid axes must be positive");
  }
  const Vec3 axes(a, b, c);
  Definition def;
  def.name = "ellipsoid";
  def.dim = 2;
  def.in_domain = radius_domain(chart_radius);
  def.embed = [axes](const Vec& q) -> Vec3 {
    return axes.cwiseProduct(stereographic_embed(q));
  };
  def.embed_jacobian = [axes](const Vec& q) -> EmbedJacobian {
    return axes.asDiagonal() * stereographic_jacobian(q);
  };
  def.chart_of = [axes](const Vec3& y) {
    return stereographic_chart(y.cwiseQuotient(axes).normalized());
  };
  def.metric = [axes](const Vec& q) -> Mat {
    const EmbedJacobian j = axes.asDiagonal() * stereographic_jacobian(q);
    return j.transpose() * j;
  };
  // Gamma^a_{bc} = (G^{-1} J^T)_{a i} d^2 F_i / dq_b dq_c for an embedded surface.
  def.christoffel = [axes](const Vec& q) {
    const EmbedJacobian j = axes.asDiagonal() * stereographic_jacobian(q);
    const Mat g = j.transpose() * j;
    const Eigen::Matrix<double, 2, 3> proj = g.inverse() * j.transpose();
    const auto h = stereographic_hessians(q);
    Christoffel cs = Christoffel::zero(2);
    for (int a = 0; a < 2; ++a) {
      for (int i = 0; i < 3; ++i) cs.symbols[a] += proj(a, i) * axes(i) * h[i];
    }
    return cs;
  };
  return ManifoldChart(std::move(def));
}

bool ManifoldChart::in_domain(const Vec& x) const {
  if (x.size() != def_->dim) return false;
  if (def_->in_domain) return def_->in_domain(x);
  return all_finite(x);
}

void ManifoldChart::require_domain(const Vec& x) const {
  if (!in_domain(x)) throw DomainError("point outside the domain of chart '" + name() + "'");
}

Mat ManifoldChart::metric(const Vec& x) const {
  require_domain(x);
  return def_->metric(x);
}

Christoffel ManifoldChart::christoffel(const Vec& x) const {
  require_domain(x);
  if (def_->christoffel) return def_->christoffel(x);
  return christoffel_numeric(x);
}

Christoffel ManifoldChart::christoffel_numeric(const Vec& x, double step) const {
  require_domain(x);
  const int d = dim();
  // dg[c](a, b) = d_c G_ab
  std::array<Mat, kMaxDim> dg;
  for (int c = 0; c < d; ++c) {
    Vec xp = x, xm = x;
    xp(c) += step;
    xm(c) -= step;
    dg[c] = (def_->metric(xp) - def_->metric(xm)) / (2.0 * step);
  }
  const Mat ginv = def_->metric(x).inverse();
  Christoffel out = Christoffel::zero(d);
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      for (int c = b; c < d; ++c) {
        double v = 0.0;
        for (int e = 0; e < d; ++e) {
          v += ginv(a, e) * (dg[b](e, c) + dg[c](e, b) - dg[e](b, c));
        }
        out.symbols[a](b, c) = 0.5 * v;
        out.symbols[a](c, b) = 0.5 * v;
      }
    }
  }
  return out;
}

double ManifoldChart::volume_density(const Vec& x) const {
  return std::sqrt(metric(x).determinant());
}

Vec3 ManifoldChart::embed(const Vec& x) const {
  if (!def_->embed) throw InvalidArgument("chart '" + name() + "' has no embedding");
  require_domain(x);
  return def_->embed(x);
}

EmbedJacobian ManifoldChart::embed_jacobian(const Vec& x) const {
  if (!def_->embed) throw InvalidArgument("chart '" + name() + "' has no embedding");
  require_domain(x);
  if (def_->embed_jacobian) return def_->embed_jacobian(x);
  const double h = 1e-6;
  EmbedJacobian j(3, dim());
  for (int b = 0; b < dim(); ++b) {
    Vec xp = x, xm = x;
    xp(b) += h;
    xm(b) -= h;
    j.col(b) = (def_->embed(xp) - def_->embed(xm)) / (2.0 * h);
  }
  return j;
}

Vec ManifoldChart::chart_of(const Vec3& y) const {
  if (!def_->chart_of) throw InvalidArgument("chart '" + name() + "' has no inverse embedding");
  Vec x = def_->chart_of(y);
  require_domain(x);
  return x;
}

// ---------------------------------------------------------------------------
// BuiltinSurface

ManifoldChart BuiltinSurface::make_chart() const {
  switch (kind) {
    case Kind::flat:
      return ManifoldChart::flat(flat_dim);
    case Kind::sphere:
      return ManifoldChart::sphere();
    case Kind::ellipsoid:
      return ManifoldChart::ellipsoid(a, b, c);
  }
  throw InvalidArgument("unknown surface kind");
}

BuiltinSurface BuiltinSurface::parse(const std::string& name, double a, double b, double c) {
  BuiltinSurface s;
  if (name == "sphere") {
    s.kind = Kind::sphere;
  } else if (name == "ellipsoid") {
    s.kind = Kind::ellipsoid;
    s.a = a;
    s.b = b;
    s.c = c;
  } else if (name.rfind("flat", 0) == 0) {
    s.kind = Kind::flat;
    const std::string digits = name.substr(4);
    int d = 2;
    try {
      d = digits.empty() ? 2 : std::stoi(digits);
    } catch (const std::exception&) {
      throw InvalidArgument("unknown manifold '" + name + "'");
    }
    if (d < 1 || d > kMaxDim) throw InvalidArgument("unsupported flat dimension in '" + name + "'");
    s.flat_dim = d;
  } else {
    throw InvalidArgument("unknown manifold '" + name + "'");
  }
  return s;
}

std::string BuiltinSurface::name() const {
  switch (kind) {
    case Kind::flat:
      return "flat" + std::to_string(flat_dim);
    case Kind::sphere:
      return "sphere";
    case Kind::ellipsoid:
      return "ellipsoid";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Sphere maps

Vec3 sphere_exp(const Vec3& p, const Vec3& v) {
  const double theta = v.norm();
  if (theta == 0.0) return p;
  Vec3 q = std::cos(theta) * p + (std::sin(theta) / theta) * v;
  return q.normalized();
}

Vec3 sphere_log(const Vec3& p, const Vec3& q) {
  const double c = std::clamp(p.dot(q), -1.0, 1.0);
  const Vec3 w = q - c * p;
  const double s = w.norm();
  const double theta = std::atan2(s, c);
  if (std::numbers::pi - theta < 1e-9) {
    throw DomainError("sphere_log: antipodal points lie on the cut locus");
  }
  if (s == 0.0) return Vec3::Zero();
  return (theta / s) * w;
}

double sphere_distance(const Vec3& p, const Vec3& q) {
  return std::atan2(p.cross(q).norm(), p.dot(q));
}

Vec3 stereographic_embed(const Vec& q) {
  const double r2 = q.squaredNorm();
  const double s = 1.0 + r2;
  return Vec3(2.0 * q(0) / s, 2.0 * q(1) / s, (1.0 - r2) / s);
}

Vec stereographic_chart(const Vec3& y) {
  const double denom = 1.0 + y(2);
  if (denom <= 0.0) throw DomainError("stereographic chart: south pole is not covered");
  return Vec{{y(0) / denom, y(1) / denom}};
}

// ---------------------------------------------------------------------------
// Geodesics

namespace {

struct GeodesicState {
  Vec x;
  Vec v;
};

GeodesicState geodesic_rhs(const ManifoldChart& chart, const GeodesicState& s) {
  const Christoffel gamma = chart.christoffel(s.x);
  return {s.v, -gamma.contract(s.v, s.v)};
}

}  // namespace

Vec geodesic_endpoint(const ManifoldChart& chart, const Vec& x, const Vec& v, int steps) {
  chart.require_domain(x);
  const double h = 1.0 / steps;
  GeodesicState s{x, v};
  for (int i = 0; i < steps; ++i) {
    const GeodesicState k1 = geodesic_rhs(chart, s);
    const GeodesicState k2 = geodesic_rhs(chart, {s.x + 0.5 * h * k1.x, s.v + 0.5 * h * k1.v});
    const GeodesicState k3 = geodesic_rhs(chart, {s.x + 0.5 * h * k2.x, s.v + 0.5 * h * k2.v});
    const GeodesicState k4 = geodesic_rhs(chart, {s.x + h * k3.x, s.v + h * k3.v});
    s.x += (h / 6.0) * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
    s.v += (h / 6.0) * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
  }
  chart.require_domain(s.x);
  return s.x;
}

Vec riemannian_exp(const ManifoldChart& chart, const Vec& x, const Vec& v) {
  chart.require_domain(x);
  if (chart.definition().exp_map) return chart.definition().exp_map(x, v);
  return geodesic_endpoint(chart, x, v);
}

Vec riemannian_log(const ManifoldChart& chart, const Vec& x, const Vec& y) {
  chart.require_domain(x);
  chart.require_domain(y);
  if (chart.definition().log_map) return chart.definition().log_map(x, y);

  // Shooting: find v with geodesic_endpoint(x, v) = y.
  const int d = chart.dim();
  Vec v = y - x;
  double res_norm = 0.0;
  for (int iter = 0; iter < 50; ++iter) {
    const Vec r = geodesic_endpoint(chart, x, v) - y;
    res_norm = r.norm();
    if (res_norm < 1e-11) return v;
    Mat jac(d, d);
    const double h = 1e-7 * std::max(1.0, v.norm());
    for (int b = 0; b < d; ++b) {
      Vec vp = v, vm = v;
      vp(b) += h;
      vm(b) -= h;
      jac.col(b) = (geodesic_endpoint(chart, x, vp) - geodesic_endpoint(chart, x, vm)) / (2 * h);
    }
    const Vec delta = jac.fullPivLu().solve(r);
    double alpha = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls) {
      const Vec trial = v - alpha * delta;
      try {
        if ((geodesic_endpoint(chart, x, trial) - y).norm() < res_norm) {
          v = trial;
          improved = true;
          break;
        }
      } catch (const DomainError&) {
      }
      alpha *= 0.5;
    }
    if (!improved) break;
  }
  if (res_norm < 1e-8) return v;
  throw DomainError("riemannian_log: geodesic shooting did not converge (residual " +
                    std::to_string(res_norm) + ")");
}

// ---------------------------------------------------------------------------

Mat orthonormal_frame(const ManifoldChart& chart, const Vec& x) {
  const Mat g = chart.metric(x);
  const int d = chart.dim();
  Mat frame = Mat::Identity(d, d);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < j; ++i) {
      frame.col(j) -= frame.col(i).dot(g * frame.col(j)) * frame.col(i);
    }
    frame.col(j) /= std::sqrt(frame.col(j).dot(g * frame.col(j)));
  }
  return frame;
}

}  // namespace geomppca
