#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace geomppca {

/// Largest chart dimension supported. Keeps all small linear algebra on the
/// stack (Eigen fixed-capacity storage).
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;
// Frames with up to 2d columns, e.g. the joint [W | R] frame of the model.
using WideMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, 2 * kMaxDim>;
using WideVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 2 * kMaxDim, 1>;
using Vec3 = Eigen::Vector3d;
using EmbedJacobian = Eigen::Matrix<double, 3, Eigen::Dynamic, 0, 3, kMaxDim>;

/// A chart point left the chart domain.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A simulated path left the chart domain; callers may resample.
class RejectedSample : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Monte Carlo or optimization failure (no accepted samples, zero density, ...).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments (shapes, ranks, parameter ranges).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Christoffel symbols of the second kind at one chart point:
/// symbols[a](b, c) = Gamma^a_{bc}.
struct Christoffel {
  int dim = 0;
  std::array<Mat, kMaxDim> symbols;

  static Christoffel zero(int d) {
    Christoffel c;
    c.dim = d;
    for (int a = 0; a < d; ++a) c.symbols[a] = Mat::Zero(d, d);
    return c;
  }

  /// Gamma^a_{bc} u^b w^c.
  Vec contract(const Vec& u, const Vec& w) const {
    Vec out(dim);
    for (int a = 0; a < dim; ++a) out(a) = u.dot(symbols[a] * w);
    return out;
  }

  /// Column-wise Gamma^a_{bc} u^b F^c_j for a frame F.
  template <typename Frame>
  Frame apply(const Vec& u, const Frame& frame) const {
    Frame out(dim, frame.cols());
    for (int a = 0; a < dim; ++a) out.row(a) = (u.transpose() * symbols[a]) * frame;
    return out;
  }

  /// Gamma^a_{bc} S^{bc} for a symmetric matrix S.
  Vec trace_with(const Mat& s) const {
    Vec out(dim);
    for (int a = 0; a < dim; ++a) out(a) = symbols[a].cwiseProduct(s).sum();
    return out;
  }
};

}  // namespace geomppca
