#pragma once

// Explicit solutions: the output-layer flow for clustered training data, and
// the one-dimensional bias flow with its ladder of truncation times.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "truncflow/manifold.hpp"

namespace truncflow {

namespace detail {

struct GramFactor {
  Vector eigenvalues;
  Matrix eigenvectors;
};

inline GramFactor factor_gram(const Matrix& x0) {
  const Matrix g = x0 * x0.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (g + g.transpose()));
  if (eig.info() != Eigen::Success) throw SingularGram("clustered_explicit: eigendecomposition of X X^T failed");
  const Vector& lam = eig.eigenvalues();
  const double lmax = lam.maxCoeff();
  const double lmin = lam.minCoeff();
  if (!(lmax > 0.0) || !(lmin > 1e-10 * lmax))
    throw SingularGram("clustered_explicit: X X^T is singular (lambda_min = " + std::to_string(lmin) +
                       ", lambda_max = " + std::to_string(lmax) + ")");
  return GramFactor{lam, eig.eigenvectors()};
}

inline void check_clustered_shapes(const Matrix& w0, const Matrix& x0, const Matrix& y_ext) {
  require_square(w0, "clustered_explicit W0");
  if (x0.rows() != w0.rows() || x0.cols() < 1)
    throw DimensionMismatch("clustered_explicit: X must be Q x N with N >= 1");
  if (y_ext.rows() != x0.rows() || y_ext.cols() != x0.cols())
    throw DimensionMismatch("clustered_explicit: Y_ext must have the shape of X");
}

}  // namespace detail

/// P = X^T (X X^T)^{-1}, N x Q.
inline Matrix range_projector(const Matrix& x0) {
  const detail::GramFactor f = detail::factor_gram(x0);
  const Matrix ginv = f.eigenvectors * f.eigenvalues.cwiseInverse().asDiagonal() * f.eigenvectors.transpose();
  return x0.transpose() * ginv;
}

/// W(s) = W0 e^{-(s/N) X X^T} + Y_ext P (1 - e^{-(s/N) X X^T}).
inline Matrix clustered_explicit(const Matrix& w0, const Matrix& x0, const Matrix& y_ext, double s) {
  detail::check_clustered_shapes(w0, x0, y_ext);
  if (s == 0.0) return w0;
  const detail::GramFactor f = detail::factor_gram(x0);
  const double n = static_cast<double>(x0.cols());
  const Vector decay = (-(s / n) * f.eigenvalues).array().exp().matrix();
  const Matrix e = f.eigenvectors * decay.asDiagonal() * f.eigenvectors.transpose();
  const Matrix ginv = f.eigenvectors * f.eigenvalues.cwiseInverse().asDiagonal() * f.eigenvectors.transpose();
  const Matrix target = y_ext * (x0.transpose() * ginv);
  return w0 * e + target * (Matrix::Identity(w0.rows(), w0.cols()) - e);
}

/// -(1/N) (W X - Y_ext) X^T
inline Matrix clustered_rhs(const Matrix& w, const Matrix& x0, const Matrix& y_ext) {
  detail::check_clustered_shapes(w, x0, y_ext);
  return -(1.0 / static_cast<double>(x0.cols())) * (w * x0 - y_ext) * x0.transpose();
}

/// One exponential piece of the one-dimensional flow: on [s_start, s_stop),
/// (y - b)(s) = gap_start * exp(-rate (s - s_start)) with rate = truncated / N.
struct OneDimSegment {
  double s_start = 0.0;
  double s_stop = std::numeric_limits<double>::infinity();
  std::size_t truncated = 0;
  double rate = 0.0;
  double gap_start = 0.0;
};

struct OneDimSolution {
  double y = 0.0;
  std::size_t n = 0;
  bool frozen = false;  // no point truncated at s = 0; the field vanishes identically
  std::vector<double> event_times;  // s at which a further point enters truncation
  std::vector<OneDimSegment> segments;

  double gap(double s) const {
    const OneDimSegment* seg = &segments.front();
    for (const auto& g : segments)
      if (s >= g.s_start) seg = &g;
    return seg->gap_start * std::exp(-seg->rate * (s - seg->s_start));
  }
  double bias(double s) const { return y - gap(s); }
};

/// Q = 1 bias flow b' = (n(b)/N)(y - b) with n(b) = #{x_i <= b}. Points are
/// truncated once b reaches them, so b climbs the sorted points towards y.
inline OneDimSolution one_dim_flow(const std::vector<double>& points, double y, double b0, std::size_t n) {
  if (points.empty()) throw BadOrdering("one_dim_flow: no points");
  for (std::size_t i = 1; i < points.size(); ++i)
    if (!(points[i] > points[i - 1])) throw BadOrdering("one_dim_flow: points must be strictly increasing");
  if (!(y > points.back())) throw LabelInsideData("one_dim_flow: label y must exceed every point");
  if (n != points.size()) throw DimensionMismatch("one_dim_flow: N must equal the number of points");

  OneDimSolution sol;
  sol.y = y;
  sol.n = n;
  std::size_t k = 0;
  while (k < points.size() && points[k] <= b0) ++k;
  const double nn = static_cast<double>(n);
  double s = 0.0;
  double gap = y - b0;
  if (k == 0) {
    sol.frozen = true;
    sol.segments.push_back(OneDimSegment{0.0, std::numeric_limits<double>::infinity(), 0, 0.0, gap});
    return sol;
  }
  for (;;) {
    OneDimSegment seg{s, std::numeric_limits<double>::infinity(), k, static_cast<double>(k) / nn, gap};
    if (k == points.size() || gap <= 0.0) {
      sol.segments.push_back(seg);
      break;
    }
    const double next_gap = y - points[k];
    seg.s_stop = s + (nn / static_cast<double>(k)) * std::log(gap / next_gap);
    sol.segments.push_back(seg);
    s = seg.s_stop;
    gap = next_gap;
    sol.event_times.push_back(s);
    ++k;
  }
  return sol;
}

}  // namespace truncflow
