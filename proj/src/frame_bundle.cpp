#include "geomppca/frame_bundle.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace geomppca {

void FramePoint::validate() const {
  const int d = chart.dim();
  if (x.size() != d) throw InvalidArgument("frame point: base dimension mismatch");
  if (nu.rows() != d || nu.cols() < 1 || nu.cols() > d) {
    throw InvalidArgument("frame point: frame must be d x k with 1 <= k <= d");
  }
  chart.require_domain(x);
  if (Eigen::FullPivLU<Mat>(nu).rank() != nu.cols()) {
    throw InvalidArgument("frame point: frame columns are linearly dependent");
  }
}

std::vector<FrameTangent> horizontal_basis(const FramePoint& u) {
  const Christoffel gamma = u.chart.christoffel(u.x);
  std::vector<FrameTangent> fields;
  fields.reserve(u.rank());
  for (int i = 0; i < u.rank(); ++i) {
    const Vec col = u.nu.col(i);
    fields.push_back({col, transport_rate(gamma, col, u.nu)});
  }
  return fields;
}

Mat parallel_transport(const ManifoldChart& chart, std::span<const Vec> base_path, const Mat& nu0) {
  if (base_path.empty()) throw InvalidArgument("parallel_transport: empty path");
  for (const Vec& p : base_path) chart.require_domain(p);
  Mat nu = nu0;
  for (std::size_t j = 0; j + 1 < base_path.size(); ++j) {
    nu = transport_step(chart, base_path[j], base_path[j + 1], nu);
  }
  return nu;
}

namespace {

struct HeunResult {
  Vec x;
  Mat nu;
};

// One Heun step of du = H_i(u) dz^i for a latent increment dz.
HeunResult develop_step(const ManifoldChart& chart, const Vec& x, const Mat& nu, const Vec& dz) {
  const Vec dx1 = nu * dz;
  const Mat r1 = transport_rate(chart.christoffel(x), dx1, nu);
  const Vec xp = x + dx1;
  const Mat nup = nu + r1;
  chart.require_domain(xp);
  const Vec dx2 = nup * dz;
  const Mat r2 = transport_rate(chart.christoffel(xp), dx2, nup);
  return {x + 0.5 * (dx1 + dx2), nu + 0.5 * (r1 + r2)};
}

}  // namespace

std::vector<FramePoint> develop(const FramePoint& u0, std::span<const Vec> latent_path) {
  u0.validate();
  if (latent_path.empty()) throw InvalidArgument("develop: empty latent path");
  const int k = u0.rank();
  for (const Vec& z : latent_path) {
    if (z.size() != k) throw InvalidArgument("develop: latent dimension must equal frame rank");
  }
  if (!latent_path.front().isZero(0.0)) throw InvalidArgument("develop: latent path must start at 0");

  std::vector<FramePoint> out;
  out.reserve(latent_path.size());
  out.push_back(u0);
  Vec x = u0.x;
  Mat nu = u0.nu;
  for (std::size_t j = 0; j + 1 < latent_path.size(); ++j) {
    const Vec dz = latent_path[j + 1] - latent_path[j];
    HeunResult next = develop_step(u0.chart, x, nu, dz);
    u0.chart.require_domain(next.x);
    x = next.x;
    nu = next.nu;
    out.push_back({u0.chart, x, nu});
  }
  return out;
}

std::vector<Vec> anti_develop(const FramePoint& u0, std::span<const Vec> base_path) {
  u0.validate();
  if (base_path.empty()) throw InvalidArgument("anti_develop: empty path");
  const ManifoldChart& chart = u0.chart;
  const int k = u0.rank();

  std::vector<Vec> latent;
  latent.reserve(base_path.size());
  latent.push_back(Vec::Zero(k));
  Vec x = base_path.front();
  Mat nu = u0.nu;
  for (std::size_t j = 0; j + 1 < base_path.size(); ++j) {
    const Vec dx = base_path[j + 1] - base_path[j];
    const Christoffel gamma = chart.christoffel(x);
    const Mat g = chart.metric(x);
    // The Heun base increment is A(dz) dz with A(dz) = nu + 0.5 * rate(nu dz).
    Vec dz = metric_pseudo_inverse(g, nu) * dx;
    for (int it = 0; it < 100; ++it) {
      const Mat averaged = nu + 0.5 * transport_rate(gamma, Vec(nu * dz), nu);
      const Vec next = metric_pseudo_inverse(g, averaged) * dx;
      const double change = (next - dz).norm();
      dz = next;
      if (change <= 1e-15 * (1.0 + dz.norm())) break;
    }
    HeunResult step = develop_step(chart, x, nu, dz);
    x = base_path[j + 1];
    nu = step.nu;
    latent.push_back(latent.back() + dz);
  }
  return latent;
}

namespace {

void require_square(const FramePoint& u, const char* what) {
  if (u.rank() != u.dim()) {
    throw InvalidArgument(std::string(what) + ": requires a full frame (k = d)");
  }
}

}  // namespace

double sub_inner(const FramePoint& u, const Vec& v, const Vec& w) {
  require_square(u, "sub_inner");
  const Eigen::FullPivLU<Mat> lu(u.nu);
  if (!lu.isInvertible()) throw InvalidArgument("sub_inner: frame is rank deficient");
  const Vec a = lu.solve(v);
  const Vec b = lu.solve(w);
  return a.dot(b);
}

double frame_volume(const FramePoint& u) {
  require_square(u, "frame_volume");
  const Mat g = u.chart.metric(u.x);
  return std::sqrt(std::max(0.0, (u.nu.transpose() * g * u.nu).determinant()));
}

namespace {

// FM coordinates (x, vec(nu)) <-> vectors.
Eigen::VectorXd pack(const Vec& x, const Mat& nu) {
  Eigen::VectorXd z(x.size() + nu.size());
  z.head(x.size()) = x;
  z.tail(nu.size()) = Eigen::Map<const Eigen::VectorXd>(nu.data(), nu.size());
  return z;
}

Eigen::VectorXd horizontal_field(const ManifoldChart& chart, const Eigen::VectorXd& z, int d,
                                 int k, int i) {
  const Vec x = z.head(d);
  const Mat nu = Eigen::Map<const Eigen::MatrixXd>(z.data() + d, d, k);
  const Vec col = nu.col(i);
  return pack(col, transport_rate(chart.christoffel(x), col, nu));
}

}  // namespace

FrameTangent horizontal_bracket(const FramePoint& u, int i, int j, double step) {
  u.validate();
  const int d = u.dim();
  const int k = u.rank();
  if (i < 0 || j < 0 || i >= k || j >= k) throw InvalidArgument("horizontal_bracket: bad index");
  const Eigen::VectorXd z = pack(u.x, u.nu);
  const Eigen::VectorXd hi = horizontal_field(u.chart, z, d, k, i);
  const Eigen::VectorXd hj = horizontal_field(u.chart, z, d, k, j);
  // Directional derivatives D H_j . H_i and D H_i . H_j.
  const Eigen::VectorXd dj_along_i =
      (horizontal_field(u.chart, z + step * hi, d, k, j) -
       horizontal_field(u.chart, z - step * hi, d, k, j)) / (2.0 * step);
  const Eigen::VectorXd di_along_j =
      (horizontal_field(u.chart, z + step * hj, d, k, i) -
       horizontal_field(u.chart, z - step * hj, d, k, i)) / (2.0 * step);
  const Eigen::VectorXd bracket = dj_along_i - di_along_j;
  FrameTangent out;
  out.base = bracket.head(d);
  out.frame = Eigen::Map<const Eigen::MatrixXd>(bracket.data() + d, d, k);
  return out;
}

}  // namespace geomppca
