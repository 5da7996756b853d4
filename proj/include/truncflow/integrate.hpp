#pragma once

// Adaptive integrators for the layer flows and the collapsed flow.
//
// Layer flows live on (R^Q x O(Q))^L. One step is the commutator-free
// fourth-order Lie group scheme with the action (beta, R) -> (beta + h b,
// exp(h Omega) R); on the beta component it reduces to classical RK4.
// The activation pattern is frozen over a step. When the pattern at the end
// of a step differs from the one at its start, the crossing is bisected down
// to event_tol and the step is cut there; each flipped bit is an Event.
// Boundaries that attract from both sides are followed as Filippov sliding
// modes.
// Step size is controlled by step doubling and by the cost-monotonicity test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>
#include "truncflow/measures.hpp"
#include "truncflow/model.hpp"
#include "truncflow/rhs.hpp"

namespace truncflow {

struct StepOptions {
  double initial_step = 1e-2;
  double max_step = 0.05;
  double min_step = 1e-14;
  double atol = 1e-9;
  double rtol = 1e-7;
  double event_tol = 1e-9;
  double monotone_tol = 1e-8;  // cost_new <= cost + monotone_tol * (1 + cost)
  int reproject_every = 100;
  std::size_t max_steps = 2'000'000;
  std::size_t max_events = 100'000;
};

struct LayerDiagnostics {
  double omega_norm = 0.0;
  double beta_gap = 0.0;  // |beta_l + ytilde_l|; NaN for a layer without a label
  std::vector<std::size_t> truncated_counts;
};

struct FlowSample {
  double s = 0.0;
  ModelState state;
  double cost = 0.0;
  std::vector<LayerDiagnostics> per_layer;
};

enum class Direction { EnteringTruncation, LeavingTruncation };

inline const char* to_string(Direction d) {
  return d == Direction::EnteringTruncation ? "entering" : "leaving";
}

struct Event {
  double s = 0.0;
  std::size_t layer = 0;
  PointRef point;
  std::size_t coordinate = 0;
  Direction direction = Direction::EnteringTruncation;
};

struct Trajectory {
  std::vector<FlowSample> samples;
  std::vector<Event> events;
  std::vector<std::string> warnings;
  std::size_t rejected_steps = 0;

  const FlowSample& final_sample() const { return samples.back(); }
};

namespace detail {

struct LayerTangent {
  std::vector<Vector> beta_dot;
  std::vector<Matrix> omega;
};

inline LayerTangent to_tangent(const std::vector<LayerRhs>& rhs) {
  LayerTangent t;
  for (const auto& r : rhs) {
    t.beta_dot.push_back(r.beta_dot);
    t.omega.push_back(r.omega.matrix());
  }
  return t;
}

inline LayerTangent combine(std::initializer_list<std::pair<double, const LayerTangent*>> terms) {
  LayerTangent out = *terms.begin()->second;
  const double c0 = terms.begin()->first;
  for (std::size_t l = 0; l < out.beta_dot.size(); ++l) {
    out.beta_dot[l] *= c0;
    out.omega[l] *= c0;
  }
  for (auto it = terms.begin() + 1; it != terms.end(); ++it) {
    for (std::size_t l = 0; l < out.beta_dot.size(); ++l) {
      out.beta_dot[l] += it->first * it->second->beta_dot[l];
      out.omega[l] += it->first * it->second->omega[l];
    }
  }
  return out;
}

// (beta + h b, exp(h Omega) R) per layer.
inline std::vector<LayerParams> act(const std::vector<LayerParams>& y, const LayerTangent& t, double h) {
  std::vector<LayerParams> out;
  out.reserve(y.size());
  for (std::size_t l = 0; l < y.size(); ++l) {
    Matrix r = y[l].r();
    if (!t.omega[l].isZero(0.0)) r = expm(h * t.omega[l]) * r;
    out.emplace_back(OrthogonalMatrix(std::move(r)), Vector(y[l].beta + h * t.beta_dot[l]));
  }
  return out;
}

using LayerField = std::function<LayerTangent(const std::vector<LayerParams>&, const ActivationPattern&)>;
using PatternFn = std::function<ActivationPattern(const std::vector<LayerParams>&)>;
using LayerCost = std::function<double(const std::vector<LayerParams>&)>;

inline std::vector<LayerParams> cf4_step(const LayerField& f, const std::vector<LayerParams>& y,
                                         const ActivationPattern& pattern, double h) {
  const LayerTangent f1 = f(y, pattern);
  const auto y2 = act(y, f1, 0.5 * h);
  const LayerTangent f2 = f(y2, pattern);
  const auto y3 = act(y, f2, 0.5 * h);
  const LayerTangent f3 = f(y3, pattern);
  const auto y4 = act(y2, combine({{1.0, &f3}, {-0.5, &f1}}), h);
  const LayerTangent f4 = f(y4, pattern);
  const auto mid = act(y, combine({{0.25, &f1}, {1.0 / 6.0, &f2}, {1.0 / 6.0, &f3}, {-1.0 / 12.0, &f4}}), h);
  return act(mid, combine({{-1.0 / 12.0, &f1}, {1.0 / 6.0, &f2}, {1.0 / 6.0, &f3}, {0.25, &f4}}), h);
}

inline std::vector<LayerParams> cf4_doubled(const LayerField& f, const std::vector<LayerParams>& y,
                                            const ActivationPattern& pattern, double h) {
  return cf4_step(f, cf4_step(f, y, pattern, 0.5 * h), pattern, 0.5 * h);
}

inline double scaled_error(double a, double b, const StepOptions& o) {
  return std::abs(a - b) / (o.atol + o.rtol * std::max(std::abs(a), std::abs(b)));
}

inline double layer_error(const std::vector<LayerParams>& a, const std::vector<LayerParams>& b,
                          const StepOptions& o) {
  double err = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (Eigen::Index i = 0; i < a[l].beta.size(); ++i)
      err = std::max(err, scaled_error(a[l].beta(i), b[l].beta(i), o));
    for (Eigen::Index i = 0; i < a[l].r().size(); ++i)
      err = std::max(err, scaled_error(a[l].r()(i), b[l].r()(i), o));
  }
  return std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
}

inline double growth_factor(double err) {
  if (err <= 0.0) return 4.0;
  return std::clamp(0.9 * std::pow(err, -0.2), 0.2, 4.0);
}

/// One activation bit: entry `index` of mask list `layer`, coordinate `coord`.
struct BitRef {
  std::size_t layer = 0;
  std::size_t index = 0;
  std::size_t coord = 0;
  friend bool operator==(const BitRef&, const BitRef&) = default;
};

struct LayerFlowProblem {
  LayerField field;
  PatternFn pattern;
  LayerCost cost;
  std::function<PointRef(std::size_t layer, std::size_t index)> point_of;
  // Pushed-forward coordinate whose sign is the bit.
  std::function<double(const std::vector<LayerParams>&, const BitRef&)> coordinate;
};

inline void set_bit(ActivationPattern& p, const BitRef& b, bool v) { p[b.layer][b.index].bits[b.coord] = v; }
inline bool get_bit(const ActivationPattern& p, const BitRef& b) { return p[b.layer][b.index][b.coord]; }

// Bits with one shared coordinate (points merged by an earlier layer) switch together.
using BitGroup = std::vector<BitRef>;

inline void set_group(ActivationPattern& p, const BitGroup& g, bool v) {
  for (const auto& b : g) set_bit(p, b, v);
}

// Sliding bits are stored on the h(0) = 0 side.
inline ActivationPattern normalized(ActivationPattern p, const std::vector<BitGroup>& sliding) {
  for (const auto& g : sliding) set_group(p, g, false);
  return p;
}

// d/de coordinate(act(y, t, e)) at e = 0.
inline double coordinate_rate(const LayerFlowProblem& p, const std::vector<LayerParams>& y, const LayerTangent& t,
                              const BitRef& b) {
  constexpr double e = 1e-6;
  return (p.coordinate(act(y, t, e), b) - p.coordinate(act(y, t, -e), b)) / (2.0 * e);
}

inline constexpr double kSlidingGain = 10.0;

struct SlidingField {
  LayerTangent tangent;
  std::vector<double> gates;  // weight of the bit = 1 side, per sliding group
  bool admissible = true;
};

// Filippov field on the intersection of the sliding boundaries: the modes of
// the 2^k sign combinations are blended with multilinear weights
// prod_j (v_j ? lambda_j : 1 - lambda_j), lambda chosen so that every sliding
// coordinate g_j obeys g_j' = -kSlidingGain * g_j. Admissible iff lambda lies
// in [0, 1]^k.
inline SlidingField sliding_field(const LayerFlowProblem& p, const std::vector<LayerParams>& y,
                                  const ActivationPattern& pattern, const std::vector<BitGroup>& sliding) {
  const auto k = static_cast<Eigen::Index>(sliding.size());
  const std::size_t nv = std::size_t{1} << sliding.size();
  std::vector<LayerTangent> modes;
  Matrix d(k, static_cast<Eigen::Index>(nv));
  Vector g(k);
  for (Eigen::Index j = 0; j < k; ++j) g(j) = p.coordinate(y, sliding[static_cast<std::size_t>(j)].front());
  for (std::size_t v = 0; v < nv; ++v) {
    ActivationPattern pv = pattern;
    for (Eigen::Index j = 0; j < k; ++j) set_group(pv, sliding[static_cast<std::size_t>(j)], (v >> j) & 1U);
    modes.push_back(p.field(y, pv));
    for (Eigen::Index j = 0; j < k; ++j)
      d(j, static_cast<Eigen::Index>(v)) = coordinate_rate(p, y, modes.back(), sliding[static_cast<std::size_t>(j)].front());
  }
  const auto weights = [&](const Vector& lam, Matrix* dw) {
    Vector w(static_cast<Eigen::Index>(nv));
    if (dw) dw->setZero(static_cast<Eigen::Index>(nv), k);
    for (std::size_t v = 0; v < nv; ++v) {
      double prod = 1.0;
      for (Eigen::Index j = 0; j < k; ++j) prod *= ((v >> j) & 1U) ? lam(j) : 1.0 - lam(j);
      w(static_cast<Eigen::Index>(v)) = prod;
      if (!dw) continue;
      for (Eigen::Index i = 0; i < k; ++i) {
        double part = ((v >> i) & 1U) ? 1.0 : -1.0;
        for (Eigen::Index j = 0; j < k; ++j)
          if (j != i) part *= ((v >> j) & 1U) ? lam(j) : 1.0 - lam(j);
        (*dw)(static_cast<Eigen::Index>(v), i) = part;
      }
    }
    return w;
  };
  Vector lam = Vector::Constant(k, 0.5);
  for (int it = 0; it < 30; ++it) {
    Matrix dw;
    const Vector res = d * weights(lam, &dw) + kSlidingGain * g;
    const Vector step = (d * dw).fullPivLu().solve(res);
    if (!step.allFinite()) {
      lam.setConstant(std::numeric_limits<double>::quiet_NaN());
      break;
    }
    lam -= step;
    if (step.norm() < 1e-14) break;
  }
  SlidingField out;
  for (Eigen::Index j = 0; j < k; ++j) {
    out.gates.push_back(lam(j));
    if (!(lam(j) >= -1e-9 && lam(j) <= 1.0 + 1e-9)) out.admissible = false;
  }
  const Vector w = weights(lam.array().isNaN().select(0.5, lam).cwiseMax(0.0).cwiseMin(1.0), nullptr);
  out.tangent = combine({{w(0), &modes[0]}});
  for (std::size_t v = 1; v < nv; ++v) out.tangent = combine({{1.0, &out.tangent}, {w(static_cast<Eigen::Index>(v)), &modes[v]}});
  return out;
}

inline std::vector<std::size_t> count_truncated(const std::vector<SectorMask>& masks, std::size_t q) {
  std::vector<std::size_t> n(q, 0);
  for (const auto& m : masks)
    for (std::size_t r = 0; r < q; ++r)
      if (!m[r]) ++n[r];
  return n;
}

inline double beta_gap(const ModelState& st, const std::vector<LayerParams>& y, std::size_t l) {
  if (l >= st.pulled_labels().size()) return std::numeric_limits<double>::quiet_NaN();
  return (y[l].beta + st.pulled_label(l)).norm();
}

inline void record_events(const ActivationPattern& before, const ActivationPattern& after, double s,
                          const LayerFlowProblem& p, std::vector<Event>& events) {
  for (std::size_t l = 0; l < before.size(); ++l) {
    for (std::size_t i = 0; i < before[l].size(); ++i) {
      const SectorMask& a = before[l][i];
      const SectorMask& b = after[l][i];
      if (a == b) continue;
      for (std::size_t r = 0; r < a.size(); ++r) {
        if (a[r] == b[r]) continue;
        events.push_back(Event{s, l, p.point_of(l, i), r,
                               a[r] ? Direction::EnteringTruncation : Direction::LeavingTruncation});
      }
    }
  }
}

/// Bits that differ between a and b, grouped by layer, coordinate and equal coordinate value.
inline std::vector<BitGroup> differing_groups(const ActivationPattern& a, const ActivationPattern& b,
                                              const LayerFlowProblem& p, const std::vector<LayerParams>& y) {
  std::vector<BitGroup> out;
  std::vector<double> values;
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (std::size_t i = 0; i < a[l].size(); ++i) {
      for (std::size_t r = 0; r < a[l][i].size(); ++r) {
        if (a[l][i][r] == b[l][i][r]) continue;
        const BitRef bit{l, i, r};
        const double v = p.coordinate(y, bit);
        bool placed = false;
        for (std::size_t k = 0; k < out.size() && !placed; ++k) {
          const BitRef& f = out[k].front();
          if (f.layer == l && f.coord == r && get_bit(a, f) == a[l][i][r] &&
              std::abs(values[k] - v) <= 1e-12 * (1.0 + std::abs(v))) {
            out[k].push_back(bit);
            placed = true;
          }
        }
        if (!placed) {
          out.push_back({bit});
          values.push_back(v);
        }
      }
    }
  }
  return out;
}

// Pattern changes are resolved in three ways. A transversal crossing is
// localised by bisection and the step is cut there. A crossing into a
// boundary from which both neighbouring modes point back is a sliding mode:
// the bit joins the sliding set and the Filippov field takes over until its
// gate leaves [0, 1].
inline Trajectory integrate_layers(const ModelState& state0, double s_end, const StepOptions& opts,
                                   const LayerFlowProblem& p) {
  if (!(s_end > 0.0) || !std::isfinite(s_end)) throw ConfigError("integrate: s_end must be positive and finite");
  if (!(opts.initial_step > 0.0) || !(opts.max_step > 0.0) || !(opts.min_step > 0.0))
    throw ConfigError("integrate: step sizes must be positive");
  using Layers = std::vector<LayerParams>;
  const auto q = static_cast<std::size_t>(state0.dim());

  std::vector<BitGroup> sliding;
  const LayerField field = [&](const Layers& yy, const ActivationPattern& pat) {
    return sliding.empty() ? p.field(yy, pat) : sliding_field(p, yy, pat, sliding).tangent;
  };
  const auto observe = [&](const Layers& yy) { return normalized(p.pattern(yy), sliding); };
  const auto diagnostics = [&](const Layers& yy, const ActivationPattern& pat) {
    const LayerTangent t = field(yy, pat);
    std::vector<LayerDiagnostics> d;
    for (std::size_t l = 0; l < yy.size(); ++l)
      d.push_back(LayerDiagnostics{t.omega[l].norm(), beta_gap(state0, yy, l), count_truncated(pat[l], q)});
    return d;
  };

  Trajectory traj;
  Layers y = state0.layers();
  ActivationPattern pattern = p.pattern(y);
  double cost = p.cost(y);
  double s = 0.0;
  traj.samples.push_back(FlowSample{s, state0, cost, diagnostics(y, pattern)});

  double h = std::min(opts.initial_step, opts.max_step);
  std::size_t attempts = 0;
  std::size_t accepted = 0;
  while (s < s_end) {
    if (++attempts > opts.max_steps) throw StepUnderflow("integrate: step budget exhausted at s = " + std::to_string(s));

    // Release sliding bits whose gate left [0, 1]; they continue on the side the field points to.
    while (!sliding.empty()) {
      const SlidingField sf = sliding_field(p, y, pattern, sliding);
      if (sf.admissible) break;
      const ActivationPattern before = pattern;
      std::vector<BitGroup> keep;
      for (std::size_t j = 0; j < sliding.size(); ++j) {
        const double gate = sf.gates[j];
        if (gate >= -1e-9 && gate <= 1.0 + 1e-9) {
          keep.push_back(sliding[j]);
          continue;
        }
        set_group(pattern, sliding[j], std::isnan(gate) ? p.coordinate(y, sliding[j].front()) > 0.0 : gate > 1.0);
      }
      if (keep.size() == sliding.size()) keep.clear();
      sliding = std::move(keep);
      record_events(before, pattern, s, p, traj.events);
    }

    h = std::min(h, opts.max_step);
    const bool last = h >= s_end - s;
    if (last) h = s_end - s;

    const auto full = cf4_step(field, y, pattern, h);
    auto next = cf4_doubled(field, y, pattern, h);
    const double err = layer_error(full, next, opts);
    if (!(err <= 1.0)) {
      ++traj.rejected_steps;
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
      if (!(h >= opts.min_step)) throw StepUnderflow("integrate: step below minimum at s = " + std::to_string(s));
      continue;
    }

    double taken = h;
    ActivationPattern observed = observe(next);
    bool crossed = observed != pattern;
    if (crossed) {
      double lo = 0.0;
      double hi = h;
      while (hi - lo > opts.event_tol) {
        const double mid = 0.5 * (lo + hi);
        if (observe(cf4_step(field, y, pattern, mid)) == pattern)
          lo = mid;
        else
          hi = mid;
      }
      taken = hi;
      if (taken < h) {
        next = cf4_doubled(field, y, pattern, taken);
        observed = observe(next);
        crossed = observed != pattern;
      }
    }

    const double next_cost = p.cost(next);
    if (!(next_cost <= cost + opts.monotone_tol * (1.0 + cost))) {
      ++traj.rejected_steps;
      h = 0.5 * taken;
      if (!(h >= opts.min_step))
        throw StepUnderflow("integrate: cost-monotone step below minimum at s = " + std::to_string(s));
      continue;
    }

    ActivationPattern next_pattern = observed;
    if (crossed) {
      for (const BitGroup& grp : differing_groups(pattern, observed, p, next)) {
        const BitRef& b = grp.front();
        const bool old_bit = get_bit(pattern, b);
        ActivationPattern flipped = pattern;
        set_group(flipped, grp, !old_bit);
        const double d_old = coordinate_rate(p, next, field(next, pattern), b);
        const double d_new = coordinate_rate(p, next, field(next, flipped), b);
        const bool attracting = old_bit ? (d_old <= 0.0 && d_new > 0.0) : (d_old >= 0.0 && d_new < 0.0);
        if (attracting) {
          sliding.push_back(grp);
          set_group(next_pattern, grp, false);
        }
      }
    }

    s = (last && taken == h) ? s_end : s + taken;
    if (crossed) {
      record_events(pattern, next_pattern, s, p, traj.events);
      if (traj.events.size() > opts.max_events)
        throw StepUnderflow("integrate: event budget exhausted (chattering) at s = " + std::to_string(s));
    }
    y = std::move(next);
    pattern = std::move(next_pattern);
    cost = next_cost;
    if (opts.reproject_every > 0 && ++accepted % static_cast<std::size_t>(opts.reproject_every) == 0) {
      for (auto& lp : y) lp = LayerParams(reorthogonalize(lp.rotation), lp.beta);
    }
    traj.samples.push_back(FlowSample{s, state0.with_layers(y), cost, diagnostics(y, pattern)});
    if (!crossed) h = taken * growth_factor(err);
  }
  return traj;
}

}  // namespace detail

/// Cluster-separated flow, all layers at once. Needs one layer per cluster and label.
/// A failed separation check is reported in Trajectory::warnings; the run proceeds.
inline Trajectory integrate_effective(const ModelState& state0, const TrainingSet& data, double s_end,
                                      const StepOptions& opts = {}) {
  detail::check_cost_inputs(state0, data);
  if (state0.num_layers() != data.num_clusters())
    throw DimensionMismatch("integrate_effective: needs one layer per cluster");

  detail::LayerFlowProblem p;
  p.field = [&](const std::vector<LayerParams>& y, const ActivationPattern& pat) {
    const ModelState st = state0.with_layers(y);
    std::vector<LayerRhs> rhs;
    for (std::size_t l = 0; l < y.size(); ++l) rhs.push_back(effective_rhs(st, data, l, &pat[l]));
    return detail::to_tangent(rhs);
  };
  p.pattern = [&](const std::vector<LayerParams>& y) { return effective_pattern(state0.with_layers(y), data); };
  p.cost = [&](const std::vector<LayerParams>& y) { return separated_cost(state0.with_layers(y), data); };
  p.point_of = [](std::size_t l, std::size_t i) { return PointRef{l, i}; };
  p.coordinate = [&](const std::vector<LayerParams>& y, const detail::BitRef& b) {
    const LayerParams& lp = y[b.layer];
    return lp.r().row(static_cast<Eigen::Index>(b.coord)).dot(data.cluster(b.layer)[b.index] + lp.beta);
  };

  Trajectory traj = detail::integrate_layers(state0, s_end, opts, p);
  const SeparationReport rep = check_cluster_separation(state0, data);
  if (!rep.separated)
    traj.warnings.push_back("initial state is not cluster separated (" + std::to_string(rep.violations.size()) +
                            " violations); the effective flow assumes separation");
  return traj;
}

/// Full chained flow without the separation assumption.
inline Trajectory integrate_general(const ModelState& state0, const TrainingSet& data, double s_end,
                                    const StepOptions& opts = {}) {
  detail::check_cost_inputs(state0, data);

  detail::LayerFlowProblem p;
  p.field = [&](const std::vector<LayerParams>& y, const ActivationPattern& pat) {
    return detail::to_tangent(general_rhs(state0.with_layers(y), data, &pat));
  };
  p.pattern = [&](const std::vector<LayerParams>& y) { return general_pattern(state0.with_layers(y), data); };
  p.cost = [&](const std::vector<LayerParams>& y) { return euclidean_cost(state0.with_layers(y), data); };
  p.point_of = [&](std::size_t, std::size_t flat) { return data.point_ref(flat); };
  p.coordinate = [&](const std::vector<LayerParams>& y, const detail::BitRef& b) {
    const Vector x = chained_truncation(y, data.point(data.point_ref(b.index)), 0, b.layer);
    const LayerParams& lp = y[b.layer];
    return lp.r().row(static_cast<Eigen::Index>(b.coord)).dot(x + lp.beta);
  };
  return detail::integrate_layers(state0, s_end, opts, p);
}

struct CollapsedSample {
  double s = 0.0;
  CollapsedState state;
  double cost = 0.0;
  Matrix invariant;  // B B^T - W^T W
};

struct CollapsedTrajectory {
  std::vector<CollapsedSample> samples;
  std::size_t rejected_steps = 0;

  /// max_s |I(s) - I(0)|_F / (1 + |I(0)|_F)
  double relative_drift() const {
    const Matrix& i0 = samples.front().invariant;
    double d = 0.0;
    for (const auto& smp : samples) d = std::max(d, (smp.invariant - i0).norm());
    return d / (1.0 + i0.norm());
  }
};

namespace detail {

inline CollapsedState collapsed_axpy(const CollapsedState& y, double h, const CollapsedRhs& k) {
  return CollapsedState(y.b_matrix + h * k.b_dot, y.w_out + h * k.w_dot, y.y_matrix);
}

inline CollapsedState rk4_collapsed(const CollapsedState& y, double h) {
  const CollapsedRhs k1 = collapsed_rhs(y);
  const CollapsedRhs k2 = collapsed_rhs(collapsed_axpy(y, 0.5 * h, k1));
  const CollapsedRhs k3 = collapsed_rhs(collapsed_axpy(y, 0.5 * h, k2));
  const CollapsedRhs k4 = collapsed_rhs(collapsed_axpy(y, h, k3));
  return CollapsedState(y.b_matrix + (h / 6.0) * (k1.b_dot + 2.0 * k2.b_dot + 2.0 * k3.b_dot + k4.b_dot),
                        y.w_out + (h / 6.0) * (k1.w_dot + 2.0 * k2.w_dot + 2.0 * k3.w_dot + k4.w_dot), y.y_matrix);
}

inline double matrix_error(const Matrix& a, const Matrix& b, const StepOptions& o) {
  double err = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) err = std::max(err, scaled_error(a(i), b(i), o));
  return err;
}

}  // namespace detail

/// Adaptive RK4 on B_dot = -W^T(WB + Y), W_dot = -(WB + Y)B^T, logging I(s) at every sample.
inline CollapsedTrajectory integrate_collapsed(const CollapsedState& cs0, double s_end, const StepOptions& opts = {}) {
  if (!(s_end > 0.0) || !std::isfinite(s_end))
    throw ConfigError("integrate_collapsed: s_end must be positive and finite");
  CollapsedTrajectory traj;
  CollapsedState y = cs0;
  double cost = collapsed_cost(y);
  double s = 0.0;
  traj.samples.push_back(CollapsedSample{s, y, cost, conserved_quantity(y)});
  double h = std::min(opts.initial_step, opts.max_step);
  std::size_t attempts = 0;
  while (s < s_end) {
    if (++attempts > opts.max_steps) throw StepUnderflow("integrate_collapsed: step budget exhausted");
    h = std::min(h, opts.max_step);
    const bool last = h >= s_end - s;
    if (last) h = s_end - s;
    const CollapsedState full = detail::rk4_collapsed(y, h);
    CollapsedState next = detail::rk4_collapsed(detail::rk4_collapsed(y, 0.5 * h), 0.5 * h);
    double err = std::max(detail::matrix_error(full.b_matrix, next.b_matrix, opts),
                          detail::matrix_error(full.w_out, next.w_out, opts));
    if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
    const double next_cost = collapsed_cost(next);
    if (!(err <= 1.0) || !(next_cost <= cost + opts.monotone_tol * (1.0 + cost))) {
      ++traj.rejected_steps;
      h *= err > 1.0 ? std::max(0.2, 0.9 * std::pow(err, -0.2)) : 0.5;
      if (!(h >= opts.min_step)) throw StepUnderflow("integrate_collapsed: step below minimum at s = " + std::to_string(s));
      continue;
    }
    s = last ? s_end : s + h;
    y = std::move(next);
    cost = next_cost;
    traj.samples.push_back(CollapsedSample{s, y, cost, conserved_quantity(y)});
    h *= detail::growth_factor(err);
  }
  return traj;
}

}  // namespace truncflow
