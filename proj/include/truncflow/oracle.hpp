#pragma once

// Ground truth that shares no formulas with the analytic fields: central
// differences of the costs, and fixed-step reference integration.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "truncflow/model.hpp"
#include "truncflow/rhs.hpp"

namespace truncflow {

struct FDSettings {
  double step = 1e-5;

  void validate() const {
    if (!(step >= 1e-9 && step <= 1e-2)) throw ConfigError("FDSettings: step must lie in [1e-9, 1e-2]");
  }
};

/// Throws NearKink if any pushed-forward coordinate along the chain lies
/// within 10 * step * max(1, |z|) of zero.
inline void require_kink_free(const ModelState& state, const TrainingSet& data, double step) {
  for (std::size_t c = 0; c < data.num_clusters(); ++c) {
    for (std::size_t i = 0; i < data.count(c); ++i) {
      Vector x = data.cluster(c)[i];
      for (std::size_t l = 0; l < state.num_layers(); ++l) {
        const LayerParams& lp = state.layer(l);
        const Vector z = lp.r() * (x + lp.beta);
        const double margin = 10.0 * step * std::max(1.0, z.norm());
        if (z.cwiseAbs().minCoeff() <= margin)
          throw NearKink("point (" + std::to_string(c) + ", " + std::to_string(i) + ") within " +
                         std::to_string(margin) + " of a kink at layer " + std::to_string(l));
        x = lp.r().transpose() * z.cwiseMax(0.0) - lp.beta;
      }
    }
  }
}

namespace detail {

inline ModelState replace_layer(const ModelState& state, std::size_t layer, LayerParams lp) {
  std::vector<LayerParams> layers = state.layers();
  layers.at(layer) = std::move(lp);
  return state.with_layers(std::move(layers));
}

}  // namespace detail

/// Central differences of euclidean_cost in each coordinate of beta_layer.
inline Vector fd_grad_beta(const ModelState& state, const TrainingSet& data, std::size_t layer,
                           const FDSettings& settings = {}) {
  settings.validate();
  if (layer >= state.num_layers()) throw IndexRange("fd_grad_beta: layer out of range");
  require_kink_free(state, data, settings.step);
  const LayerParams& lp = state.layer(layer);
  const double h = settings.step;
  Vector g(state.dim());
  for (Eigen::Index k = 0; k < state.dim(); ++k) {
    Vector bp = lp.beta;
    Vector bm = lp.beta;
    bp(k) += h;
    bm(k) -= h;
    const double cp = euclidean_cost(detail::replace_layer(state, layer, LayerParams(lp.rotation, bp)), data);
    const double cm = euclidean_cost(detail::replace_layer(state, layer, LayerParams(lp.rotation, bm)), data);
    g(k) = (cp - cm) / (2.0 * h);
  }
  return g;
}

/// omega_ij = e_i e_j^T - e_j e_i^T, i < j.
inline std::vector<AntisymmetricMatrix> standard_antisym_basis(Eigen::Index q) {
  std::vector<AntisymmetricMatrix> basis;
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = i + 1; j < q; ++j) {
      Matrix w = Matrix::Zero(q, q);
      w(i, j) = 1.0;
      w(j, i) = -1.0;
      basis.emplace_back(std::move(w));
    }
  }
  return basis;
}

/// Antisymmetric G with tr(omega G) = d/de C(exp(e omega) R_layer) at e = 0 for
/// every omega of the basis (least squares if the basis is redundant).
inline AntisymmetricMatrix fd_grad_rotation(const ModelState& state, const TrainingSet& data, std::size_t layer,
                                            const std::optional<std::vector<AntisymmetricMatrix>>& omega_basis = {},
                                            const FDSettings& settings = {}) {
  settings.validate();
  if (layer >= state.num_layers()) throw IndexRange("fd_grad_rotation: layer out of range");
  require_kink_free(state, data, settings.step);
  const Eigen::Index q = state.dim();
  const std::vector<AntisymmetricMatrix> basis = omega_basis ? *omega_basis : standard_antisym_basis(q);
  const Eigen::Index m = q * (q - 1) / 2;
  if (m == 0) return AntisymmetricMatrix::zero(q);
  const LayerParams& lp = state.layer(layer);
  const double h = settings.step;

  // tr(omega G) = -2 sum_{i<j} omega_ij G_ij
  Matrix a(static_cast<Eigen::Index>(basis.size()), m);
  Vector d(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t k = 0; k < basis.size(); ++k) {
    const AntisymmetricMatrix& w = basis[k];
    if (w.dim() != q) throw DimensionMismatch("fd_grad_rotation: basis element has wrong size");
    const double cp = euclidean_cost(detail::replace_layer(state, layer, LayerParams(retract(lp.rotation, w, h), lp.beta)), data);
    const double cm = euclidean_cost(detail::replace_layer(state, layer, LayerParams(retract(lp.rotation, w, -h), lp.beta)), data);
    d(static_cast<Eigen::Index>(k)) = (cp - cm) / (2.0 * h);
    Eigen::Index col = 0;
    for (Eigen::Index i = 0; i < q; ++i)
      for (Eigen::Index j = i + 1; j < q; ++j) a(static_cast<Eigen::Index>(k), col++) = -2.0 * w.matrix()(i, j);
  }
  const Vector g = a.colPivHouseholderQr().solve(d);
  Matrix out = Matrix::Zero(q, q);
  Eigen::Index col = 0;
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = i + 1; j < q; ++j) {
      out(i, j) = g(col++);
      out(j, i) = -out(i, j);
    }
  }
  return AntisymmetricMatrix(std::move(out));
}

struct CollapsedGradient {
  Matrix b_grad;
  Matrix w_grad;
};

/// Entrywise central differences of (1/2) tr |W B + Y|^2.
inline CollapsedGradient fd_grad_collapsed(const CollapsedState& cs, const FDSettings& settings = {}) {
  settings.validate();
  const double h = settings.step;
  const Eigen::Index q = cs.dim();
  CollapsedGradient g{Matrix::Zero(q, q), Matrix::Zero(q, q)};
  for (Eigen::Index i = 0; i < q * q; ++i) {
    Matrix bp = cs.b_matrix, bm = cs.b_matrix;
    bp(i) += h;
    bm(i) -= h;
    g.b_grad(i) = (collapsed_cost({bp, cs.w_out, cs.y_matrix}) - collapsed_cost({bm, cs.w_out, cs.y_matrix})) / (2 * h);
    Matrix wp = cs.w_out, wm = cs.w_out;
    wp(i) += h;
    wm(i) -= h;
    g.w_grad(i) = (collapsed_cost({cs.b_matrix, wp, cs.y_matrix}) - collapsed_cost({cs.b_matrix, wm, cs.y_matrix})) / (2 * h);
  }
  return g;
}

inline constexpr double kReferenceStep = 1e-4;

using LayerFieldFn = std::function<std::vector<LayerRhs>(const ModelState&)>;

/// Fixed-step fourth-order integration of a layer field (beta_dot, Omega),
/// with R advanced by exponentials. The field is re-evaluated at every stage,
/// so sector changes are resolved only to the step size.
inline ModelState reference_integrate(const LayerFieldFn& field, const ModelState& state0, double s_end,
                                      double step = kReferenceStep) {
  const auto steps = static_cast<std::size_t>(std::ceil(s_end / step - 1e-9));
  if (steps == 0) return state0;
  const double h = s_end / static_cast<double>(steps);
  using Layers = std::vector<LayerParams>;
  struct Tangent {
    std::vector<Vector> b;
    std::vector<Matrix> w;
  };
  const auto eval = [&](const Layers& y) {
    Tangent t;
    for (const auto& r : field(state0.with_layers(y))) {
      t.b.push_back(r.beta_dot);
      t.w.push_back(r.omega.matrix());
    }
    return t;
  };
  const auto act = [](const Layers& y, const std::vector<std::pair<double, const Tangent*>>& terms, double hh) {
    Layers out;
    for (std::size_t l = 0; l < y.size(); ++l) {
      Vector b = y[l].beta;
      Matrix w = Matrix::Zero(y[l].dim(), y[l].dim());
      for (const auto& [c, t] : terms) {
        b += hh * c * t->b[l];
        w += c * t->w[l];
      }
      out.emplace_back(OrthogonalMatrix(expm(hh * w) * y[l].r()), std::move(b));
    }
    return out;
  };
  Layers y = state0.layers();
  for (std::size_t n = 0; n < steps; ++n) {
    const Tangent f1 = eval(y);
    const Layers y2 = act(y, {{0.5, &f1}}, h);
    const Tangent f2 = eval(y2);
    const Tangent f3 = eval(act(y, {{0.5, &f2}}, h));
    const Tangent f4 = eval(act(y2, {{1.0, &f3}, {-0.5, &f1}}, h));
    const Layers mid = act(y, {{0.25, &f1}, {1.0 / 6.0, &f2}, {1.0 / 6.0, &f3}, {-1.0 / 12.0, &f4}}, h);
    y = act(mid, {{-1.0 / 12.0, &f1}, {1.0 / 6.0, &f2}, {1.0 / 6.0, &f3}, {0.25, &f4}}, h);
    if ((n + 1) % 100 == 0)
      for (auto& lp : y) lp = LayerParams(reorthogonalize(lp.rotation), lp.beta);
  }
  return state0.with_layers(std::move(y));
}

/// Classical RK4 at a fixed step for a matrix ODE M' = f(M).
inline Matrix reference_integrate(const std::function<Matrix(const Matrix&)>& field, const Matrix& m0, double s_end,
                                  double step = kReferenceStep) {
  const auto steps = static_cast<std::size_t>(std::ceil(s_end / step - 1e-9));
  if (steps == 0) return m0;
  const double h = s_end / static_cast<double>(steps);
  Matrix m = m0;
  for (std::size_t n = 0; n < steps; ++n) {
    const Matrix k1 = field(m);
    const Matrix k2 = field(m + 0.5 * h * k1);
    const Matrix k3 = field(m + 0.5 * h * k2);
    const Matrix k4 = field(m + h * k3);
    m += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return m;
}

/// Classical RK4 at a fixed step for the collapsed flow.
inline CollapsedState reference_integrate(const CollapsedState& cs0, double s_end, double step = kReferenceStep) {
  const Eigen::Index q = cs0.dim();
  Matrix packed(q, 2 * q);
  packed << cs0.b_matrix, cs0.w_out;
  const Matrix& y = cs0.y_matrix;
  const auto field = [&](const Matrix& m) {
    const CollapsedRhs r = collapsed_rhs(CollapsedState(m.leftCols(q), m.rightCols(q), y));
    Matrix out(q, 2 * q);
    out << r.b_dot, r.w_dot;
    return out;
  };
  const Matrix end = reference_integrate(std::function<Matrix(const Matrix&)>(field), packed, s_end, step);
  return CollapsedState(end.leftCols(q), end.rightCols(q), y);
}

}  // namespace truncflow
