#pragma once

// Dense Q x Q linear algebra on the orthogonal group O(Q) and its Lie
// algebra o(Q): antisymmetric projection, polar decomposition, the matrix
// exponential and the left retraction R <- exp(h * Omega) R.

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "truncflow/errors.hpp"

namespace truncflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Square real matrix. Plain Eigen storage; square shape is checked where it matters.
using SquareMatrix = Matrix;

inline constexpr double kOrthogonalityTol = 1e-10;
inline constexpr double kAntisymmetryTol = 1e-12;

inline void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols() || a.rows() < 1) {
    throw DimensionMismatch(std::string(what) + ": expected a non-empty square matrix, got " +
                            std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

/// ||R^T R - 1||_F
inline double orthogonality_defect(const Matrix& r) {
  return (r.transpose() * r - Matrix::Identity(r.cols(), r.cols())).norm();
}

/// Element of O(Q). Construction verifies ||R^T R - 1||_F <= 1e-10.
class OrthogonalMatrix {
 public:
  explicit OrthogonalMatrix(Matrix r) : r_(std::move(r)) {
    require_square(r_, "OrthogonalMatrix");
    const double defect = orthogonality_defect(r_);
    if (!(defect <= kOrthogonalityTol)) {
      throw NotOrthogonal("OrthogonalMatrix: ||R^T R - 1||_F = " + std::to_string(defect));
    }
  }

  static OrthogonalMatrix identity(Eigen::Index q) { return OrthogonalMatrix(Matrix::Identity(q, q)); }

  const Matrix& matrix() const { return r_; }
  Eigen::Index dim() const { return r_.rows(); }
  OrthogonalMatrix transpose() const { return OrthogonalMatrix(r_.transpose()); }

 private:
  Matrix r_;
};

/// Element of o(Q): ||A + A^T||_F <= 1e-12 * max(1, ||A||_F).
class AntisymmetricMatrix {
 public:
  explicit AntisymmetricMatrix(Matrix a) : a_(std::move(a)) {
    require_square(a_, "AntisymmetricMatrix");
    const double defect = (a_ + a_.transpose()).norm();
    if (!(defect <= kAntisymmetryTol * std::max(1.0, a_.norm()))) {
      throw NotAntisymmetric("AntisymmetricMatrix: ||A + A^T||_F = " + std::to_string(defect));
    }
  }

  static AntisymmetricMatrix zero(Eigen::Index q) { return AntisymmetricMatrix(Matrix::Zero(q, q)); }

  const Matrix& matrix() const { return a_; }
  Eigen::Index dim() const { return a_.rows(); }
  double norm() const { return a_.norm(); }

  AntisymmetricMatrix operator-() const { return AntisymmetricMatrix(Matrix(-a_)); }
  AntisymmetricMatrix operator*(double c) const { return AntisymmetricMatrix(Matrix(c * a_)); }
  AntisymmetricMatrix operator+(const AntisymmetricMatrix& o) const { return AntisymmetricMatrix(Matrix(a_ + o.a_)); }

 private:
  Matrix a_;
};

/// (A - A^T)/2, written entrywise so that the result is exactly antisymmetric.
inline AntisymmetricMatrix antisym_project(const Matrix& a) {
  require_square(a, "antisym_project");
  const Eigen::Index q = a.rows();
  Matrix out = Matrix::Zero(q, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = i + 1; j < q; ++j) {
      const double v = 0.5 * (a(i, j) - a(j, i));
      out(i, j) = v;
      out(j, i) = -v;
    }
  }
  return AntisymmetricMatrix(std::move(out));
}

struct PolarFactors {
  Matrix positive;  // |W|, symmetric positive definite
  OrthogonalMatrix rotation;
};

/// W = P R with P = |W| = U S U^T and R = U V^T, from the SVD W = U S V^T.
inline PolarFactors polar_decompose(const Matrix& w) {
  require_square(w, "polar_decompose");
  Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (!(smax > 0.0) || !(smin > 1e-12 * smax)) {
    throw SingularInput("polar_decompose: matrix is singular (sigma_min/sigma_max = " +
                        std::to_string(smax > 0.0 ? smin / smax : 0.0) + ")");
  }
  const Matrix& u = svd.matrixU();
  Matrix p = u * s.asDiagonal() * u.transpose();
  p = 0.5 * (p + p.transpose()).eval();
  return PolarFactors{std::move(p), OrthogonalMatrix(u * svd.matrixV().transpose())};
}

namespace detail {

// Diagonal [6/6] Pade approximant of exp, valid for ||a|| <= 1/2.
inline Matrix pade6(const Matrix& a) {
  static constexpr double c[] = {1.0,          1.0 / 2.0,      5.0 / 44.0,       1.0 / 66.0,
                                 1.0 / 792.0,  1.0 / 15840.0,  1.0 / 665280.0};
  const Eigen::Index q = a.rows();
  const Matrix ident = Matrix::Identity(q, q);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix even = c[0] * ident + c[2] * a2 + c[4] * a4 + c[6] * a6;
  const Matrix odd = a * (c[1] * ident + c[3] * a2 + c[5] * a4);
  const Matrix num = even + odd;
  const Matrix den = even - odd;
  return den.partialPivLu().solve(num);
}

}  // namespace detail

/// Matrix exponential by scaling and squaring around a [6/6] Pade approximant.
inline Matrix expm(const Matrix& a) {
  require_square(a, "expm");
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  Matrix e = detail::pade6(a / std::ldexp(1.0, squarings));
  for (int k = 0; k < squarings; ++k) e = (e * e).eval();
  return e;
}

/// exp(A) for A in o(Q). The Pade approximant of an antisymmetric matrix is
/// orthogonal up to rounding, and squaring keeps it there.
inline OrthogonalMatrix expm_antisym(const AntisymmetricMatrix& a) { return OrthogonalMatrix(expm(a.matrix())); }

/// exp(step * Omega) * R.
inline OrthogonalMatrix retract(const OrthogonalMatrix& r, const AntisymmetricMatrix& omega, double step) {
  if (!std::isfinite(step)) throw Error("retract: non-finite step");
  if (r.dim() != omega.dim()) throw DimensionMismatch("retract: dimension mismatch");
  if (step == 0.0) return r;
  return OrthogonalMatrix(expm(step * omega.matrix()) * r.matrix());
}

/// Nearest orthogonal matrix (polar factor); used to cancel accumulated drift.
inline OrthogonalMatrix reorthogonalize(const OrthogonalMatrix& r) { return polar_decompose(r.matrix()).rotation; }

}  // namespace truncflow
