#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "geomppca/geometry.hpp"

namespace geomppca {

/// A point of the rank-k frame bundle in chart-induced coordinates: base
/// point x and a d x k matrix whose columns are the frame vectors.
struct FramePoint {
  ManifoldChart chart;
  Vec x;
  Mat nu;

  int dim() const { return chart.dim(); }
  int rank() const { return static_cast<int>(nu.cols()); }
  /// Throws InvalidArgument on shape mismatch or rank deficiency, DomainError
  /// when x is outside the chart.
  void validate() const;
};

/// A tangent vector to the frame bundle: base and frame components.
struct FrameTangent {
  Vec base;
  Mat frame;

  double norm() const { return std::sqrt(base.squaredNorm() + frame.squaredNorm()); }
};

/// -Gamma(x)(dx, F): rate of change of a frame F parallel-transported along dx.
template <typename Frame>
Frame transport_rate(const Christoffel& gamma, const Vec& dx, const Frame& frame) {
  return -gamma.apply(dx, frame);
}

/// One Heun step transporting `frame` along the straight chart segment
/// from x0 to x1.
template <typename Frame>
Frame transport_step(const ManifoldChart& chart, const Vec& x0, const Vec& x1,
                     const Frame& frame) {
  const Vec dx = x1 - x0;
  const Frame r1 = transport_rate(chart.christoffel(x0), dx, frame);
  const Frame predicted = frame + r1;
  const Frame r2 = transport_rate(chart.christoffel(x1), dx, predicted);
  return frame + 0.5 * (r1 + r2);
}

/// Horizontal fields H_1..H_k at u. Base component of H_i is column i of nu;
/// frame component is -Gamma(x)(nu_i, nu).
std::vector<FrameTangent> horizontal_basis(const FramePoint& u);

/// Transports nu0 along a discretized base path (Heun per segment).
Mat parallel_transport(const ManifoldChart& chart, std::span<const Vec> base_path, const Mat& nu0);

/// Deterministic development of a latent path in R^k starting at 0.
std::vector<FramePoint> develop(const FramePoint& u0, std::span<const Vec> latent_path);

/// Inverse of develop: recovers the latent path (starting at 0) that develops
/// from u0 into the given base path. Each step inverts the Heun step exactly
/// via a fixed-point iteration on the metric pseudo-inverse of the frame.
std::vector<Vec> anti_develop(const FramePoint& u0, std::span<const Vec> base_path);

/// Sub-Riemannian inner product (u^{-1} v)^T (u^{-1} w). Requires k = d.
double sub_inner(const FramePoint& u, const Vec& v, const Vec& w);

/// g-volume of the frame parallelepiped, sqrt(det(nu^T G nu)). Requires k = d.
double frame_volume(const FramePoint& u);

/// Lie bracket [H_i, H_j] at u by central differences of the horizontal
/// fields along each other's flows. Indices are zero-based.
FrameTangent horizontal_bracket(const FramePoint& u, int i, int j, double step = 1e-5);

}  // namespace geomppca
