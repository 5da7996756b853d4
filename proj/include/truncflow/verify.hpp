#pragma once

// Property suites behind `truncflow verify`. Every case draws its own
// generator from (seed, property, case), so reports do not depend on the
// number of worker threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "truncflow/closed_form.hpp"
#include "truncflow/integrate.hpp"
#include "truncflow/io.hpp"
#include "truncflow/oracle.hpp"
#include "truncflow/rhs.hpp"
#include "truncflow/run.hpp"
#include "truncflow/scenarios.hpp"

namespace truncflow {

struct VerifyOptions {
  std::uint64_t seed = 0;
  unsigned threads = 0;          // 0: TRUNCFLOW_THREADS, else hardware concurrency
  bool flip_omega_sign = false;  // mutation hook: negate every analytic Omega before comparing
  bool quiet = false;
};

struct PropertyResult {
  std::string suite;
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst = 0.0;
  double tolerance = 0.0;

  bool passed() const { return cases > 0 && failures == 0; }
};

struct VerifyReport {
  std::string suite;
  std::uint64_t seed = 0;
  std::vector<PropertyResult> properties;

  bool passed() const {
    return !properties.empty() &&
           std::all_of(properties.begin(), properties.end(), [](const PropertyResult& p) { return p.passed(); });
  }

  Json to_json() const {
    Json props = Json::array();
    for (const auto& p : properties)
      props.push_back(Json{{"suite", p.suite}, {"name", p.name}, {"cases", p.cases}, {"failures", p.failures},
                           {"worst", p.worst}, {"tolerance", p.tolerance}, {"passed", p.passed()}});
    return Json{{"suite", suite}, {"seed", seed}, {"passed", passed()}, {"properties", std::move(props)}};
  }
};

inline const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> s{"gradients", "monotonicity", "conservation", "equivalence", "oned"};
  return s;
}

/// ||a - b|| / max(1, ||b||)
inline double unit_relative_error(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

inline unsigned verify_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TRUNCFLOW_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

namespace detail {

inline Rng case_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

inline std::uint64_t tag_of(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
  return h;
}

/// Runs fn(i) for i < n on a worker pool. An exception counts as an infinite discrepancy.
inline std::vector<double> parallel_cases(std::size_t n, unsigned threads, const std::function<double(std::size_t)>& fn) {
  std::vector<double> out(n, 0.0);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (const std::exception&) {
        out[i] = std::numeric_limits<double>::infinity();
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned t = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1)));
  for (unsigned k = 1; k < t; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return out;
}

/// Cases with NaN are failures; a negative value marks a skipped case.
inline PropertyResult summarize(const std::string& suite, const std::string& name, const std::vector<double>& d,
                                double tol) {
  PropertyResult p{suite, name, 0, 0, 0.0, tol};
  for (double v : d) {
    if (v < 0.0) continue;
    ++p.cases;
    if (!(v <= tol)) ++p.failures;
    p.worst = std::isnan(v) || std::isnan(p.worst) ? std::numeric_limits<double>::quiet_NaN() : std::max(p.worst, v);
  }
  return p;
}

class SuiteRunner {
 public:
  SuiteRunner(std::string suite, const VerifyOptions& o) : suite_(std::move(suite)), opts_(o), threads_(verify_threads(o.threads)) {}

  /// fn(rng) returns the discrepancy of one case.
  void property(const std::string& name, std::size_t cases, double tol, const std::function<double(Rng&)>& fn) {
    const std::uint64_t tag = tag_of(suite_ + "/" + name);
    const auto d = parallel_cases(cases, threads_, [&](std::size_t i) {
      Rng rng = case_rng(opts_.seed, tag, i);
      return fn(rng);
    });
    record(summarize(suite_, name, d, tol));
  }

  /// Cases producing several discrepancies (one per named property) from a shared computation.
  void properties(const std::vector<std::pair<std::string, double>>& names, std::size_t cases,
                  const std::function<std::vector<double>(Rng&)>& fn) {
    const std::uint64_t tag = tag_of(suite_ + "/" + names.front().first);
    std::vector<std::vector<double>> cols(names.size(), std::vector<double>(cases));
    parallel_cases(cases, threads_, [&](std::size_t i) {
      Rng rng = case_rng(opts_.seed, tag, i);
      std::vector<double> v;
      try {
        v = fn(rng);
      } catch (const std::exception&) {
        v.assign(names.size(), std::numeric_limits<double>::infinity());
      }
      for (std::size_t k = 0; k < names.size(); ++k) cols[k][i] = v.at(k);
      return 0.0;
    });
    for (std::size_t k = 0; k < names.size(); ++k) record(summarize(suite_, names[k].first, cols[k], names[k].second));
  }

  const VerifyOptions& options() const { return opts_; }
  std::vector<PropertyResult>& results() { return results_; }

 private:
  void record(PropertyResult p) {
    if (!opts_.quiet)
      std::cout << (p.passed() ? "PASS " : "FAIL ") << p.suite << "/" << p.name << "  cases=" << p.cases
                << "  worst=" << p.worst << "  tol=" << p.tolerance << std::endl;
    results_.push_back(std::move(p));
  }

  std::string suite_;
  VerifyOptions opts_;
  unsigned threads_;
  std::vector<PropertyResult> results_;
};

template <class F>
auto resample(Rng& rng, F&& make) {
  for (int attempt = 0;; ++attempt) {
    try {
      return make(rng);
    } catch (const NearKink&) {
      if (attempt >= 50) throw;
    }
  }
}

inline Eigen::Index pick(Rng& rng, Eigen::Index lo, Eigen::Index hi) {
  return std::uniform_int_distribution<Eigen::Index>(lo, hi)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Matrix omega_of(const LayerRhs& r, bool flip) { return flip ? Matrix(-r.omega.matrix()) : r.omega.matrix(); }

// ---- gradients --------------------------------------------------------------

inline void gradients_suite(SuiteRunner& s) {
  const bool flip = s.options().flip_omega_sign;
  s.property("effective_rhs_vs_fd", 100, 1e-5, [&](Rng& rng) {
    return resample(rng, [&](Rng& r) {
      const Eigen::Index q = pick(r, 2, 4);
      const Configuration cfg = random_separated_configuration(r, q, static_cast<std::size_t>(pick(r, 2, 8)));
      double worst = 0.0;
      for (std::size_t l = 0; l < cfg.state.num_layers(); ++l) {
        const LayerRhs a = effective_rhs(cfg.state, cfg.data, l);
        worst = std::max(worst, unit_relative_error(-a.beta_dot, fd_grad_beta(cfg.state, cfg.data, l)));
        worst = std::max(worst, unit_relative_error(omega_of(a, flip), fd_grad_rotation(cfg.state, cfg.data, l).matrix()));
      }
      return worst;
    });
  });
  s.property("general_rhs_vs_fd", 100, 1e-5, [&](Rng& rng) {
    return resample(rng, [&](Rng& r) {
      const Eigen::Index q = pick(r, 2, 4);
      const Configuration cfg = random_general_configuration(r, q, static_cast<std::size_t>(pick(r, 1, 3)),
                                                             static_cast<std::size_t>(pick(r, 1, 3)),
                                                             static_cast<std::size_t>(pick(r, 1, 8)));
      require_kink_free(cfg.state, cfg.data, FDSettings{}.step);
      const auto rhs = general_rhs(cfg.state, cfg.data);
      double worst = 0.0;
      for (std::size_t l = 0; l < rhs.size(); ++l) {
        worst = std::max(worst, unit_relative_error(-rhs[l].beta_dot, fd_grad_beta(cfg.state, cfg.data, l)));
        worst = std::max(worst, unit_relative_error(omega_of(rhs[l], flip), fd_grad_rotation(cfg.state, cfg.data, l).matrix()));
      }
      return worst;
    });
  });
  s.property("collapsed_rhs_vs_fd", 100, 1e-6, [&](Rng& rng) {
    const Eigen::Index q = pick(rng, 2, 4);
    const CollapsedState cs(gaussian_matrix(rng, q, q), gaussian_matrix(rng, q, q), gaussian_matrix(rng, q, q));
    const CollapsedRhs a = collapsed_rhs(cs);
    const CollapsedGradient g = fd_grad_collapsed(cs);
    return std::max(unit_relative_error(-a.b_dot, g.b_grad), unit_relative_error(-a.w_dot, g.w_grad));
  });
  s.property("directional_derivative", 100, 1e-5, [&](Rng& rng) {
    return resample(rng, [&](Rng& r) {
      const Eigen::Index q = pick(r, 2, 4);
      const Configuration cfg = random_general_configuration(r, q, static_cast<std::size_t>(pick(r, 1, 3)), 2,
                                                             static_cast<std::size_t>(pick(r, 1, 6)));
      const double h = 1e-5;
      require_kink_free(cfg.state, cfg.data, h);
      const auto l = static_cast<std::size_t>(pick(r, 0, static_cast<Eigen::Index>(cfg.state.num_layers()) - 1));
      const AntisymmetricMatrix w = random_antisymmetric(r, q);
      const LayerParams& lp = cfg.state.layer(l);
      const double cp = euclidean_cost(replace_layer(cfg.state, l, LayerParams(retract(lp.rotation, w, h), lp.beta)), cfg.data);
      const double cm = euclidean_cost(replace_layer(cfg.state, l, LayerParams(retract(lp.rotation, w, -h), lp.beta)), cfg.data);
      const double fd = (cp - cm) / (2.0 * h);
      const double an = (w.matrix() * omega_of(general_rhs(cfg.state, cfg.data)[l], flip)).trace();
      return std::abs(fd - an) / std::max(1.0, std::abs(fd));
    });
  });
  // err(h) / err(h/2) of the rotation oracle; |ratio - 4| <= 1 or both errors at roundoff.
  s.property("fd_second_order", 100, 1.0, [&](Rng& rng) {
    return resample(rng, [&](Rng& r) {
      const Configuration cfg = random_general_configuration(r, pick(r, 2, 4), static_cast<std::size_t>(pick(r, 1, 3)), 2,
                                                             static_cast<std::size_t>(pick(r, 1, 4)));
      const std::size_t l = static_cast<std::size_t>(pick(r, 0, static_cast<Eigen::Index>(cfg.state.num_layers()) - 1));
      const Matrix an = omega_of(general_rhs(cfg.state, cfg.data)[l], flip);
      const double e1 = (fd_grad_rotation(cfg.state, cfg.data, l, {}, FDSettings{1e-3}).matrix() - an).norm();
      const double e2 = (fd_grad_rotation(cfg.state, cfg.data, l, {}, FDSettings{5e-4}).matrix() - an).norm();
      if (e1 < 1e-9 * std::max(1.0, an.norm())) return 0.0;
      return std::abs(e1 / e2 - 4.0);
    });
  });
}

// ---- monotonicity -----------------------------------------------------------

inline double descent_identity_error(const ModelState& st, const TrainingSet& data) {
  const auto rhs = general_rhs(st, data);
  const LayerTangent t = to_tangent(rhs);
  double rate = 0.0;
  for (const auto& r : rhs) rate -= r.beta_dot.squaredNorm() + r.omega.matrix().squaredNorm();
  const double e = 1e-6;
  const double fd = (euclidean_cost(st.with_layers(act(st.layers(), t, e)), data) -
                     euclidean_cost(st.with_layers(act(st.layers(), t, -e)), data)) /
                    (2.0 * e);
  if (std::abs(rate) <= 1e-8 && std::abs(fd) <= 1e-8) return 0.0;
  return std::abs(fd - rate) / std::max(std::abs(rate), std::abs(fd));
}

inline void monotonicity_suite(SuiteRunner& s) {
  const double mono_tol = StepOptions{}.monotone_tol;
  s.properties({{"effective_cost_nonincreasing", mono_tol}, {"effective_orthogonality", 1e-8}}, 100, [](Rng& rng) {
    const Configuration cfg = random_separated_configuration(rng, pick(rng, 2, 3), static_cast<std::size_t>(pick(rng, 2, 6)),
                                                             0.5, LabelPlacement::NearCluster);
    const Trajectory t = integrate_effective(cfg.state, cfg.data, 1.0);
    return std::vector<double>{std::max(0.0, max_cost_increase(t)), max_orthogonality_drift(t)};
  });
  s.properties({{"general_cost_nonincreasing", mono_tol}, {"general_orthogonality", 1e-8}}, 100, [](Rng& rng) {
    const Configuration cfg = random_general_configuration(rng, pick(rng, 2, 3), static_cast<std::size_t>(pick(rng, 1, 2)),
                                                           static_cast<std::size_t>(pick(rng, 1, 2)),
                                                           static_cast<std::size_t>(pick(rng, 2, 5)));
    const Trajectory t = integrate_general(cfg.state, cfg.data, 0.5);
    return std::vector<double>{std::max(0.0, max_cost_increase(t)), max_orthogonality_drift(t)};
  });
  s.property("descent_identity", 100, 1e-4, [](Rng& rng) {
    return resample(rng, [](Rng& r) {
      const Configuration cfg = random_general_configuration(r, pick(r, 2, 4), static_cast<std::size_t>(pick(r, 1, 3)),
                                                             static_cast<std::size_t>(pick(r, 1, 3)),
                                                             static_cast<std::size_t>(pick(r, 1, 8)));
      require_kink_free(cfg.state, cfg.data, 1e-4);
      return descent_identity_error(cfg.state, cfg.data);
    });
  });
}

// ---- conservation -----------------------------------------------------------

inline void conservation_suite(SuiteRunner& s) {
  s.properties({{"invariant_drift", 1e-6}, {"collapsed_cost_nonincreasing", StepOptions{}.monotone_tol}}, 100,
               [](Rng& rng) {
                 const Eigen::Index q = pick(rng, 2, 4);
                 const CollapsedState cs(gaussian_matrix(rng, q, q), gaussian_matrix(rng, q, q), gaussian_matrix(rng, q, q));
                 const CollapsedTrajectory t = integrate_collapsed(cs, 5.0);
                 return std::vector<double>{t.relative_drift(), max_cost_increase(t)};
               });
  s.property("invariant_symmetric", 100, 0.0, [](Rng& rng) {
    const Eigen::Index q = pick(rng, 1, 8);
    const Matrix i = conserved_quantity(CollapsedState(gaussian_matrix(rng, q, q), gaussian_matrix(rng, q, q),
                                                       gaussian_matrix(rng, q, q)));
    return (i - i.transpose()).norm();
  });
}

// ---- equivalence ------------------------------------------------------------

inline double rhs_difference(const LayerRhs& a, const LayerRhs& b) {
  return std::max((a.beta_dot - b.beta_dot).cwiseAbs().maxCoeff(), (a.omega.matrix() - b.omega.matrix()).cwiseAbs().maxCoeff());
}

inline double state_difference(const ModelState& a, const ModelState& b) {
  double d = 0.0;
  for (std::size_t l = 0; l < a.num_layers(); ++l)
    d = std::max({d, (a.layer(l).beta - b.layer(l).beta).norm(), (a.layer(l).r() - b.layer(l).r()).norm()});
  return d;
}

inline void equivalence_suite(SuiteRunner& s) {
  s.property("moment_form", 500, 1e-12, [](Rng& rng) {
    const Eigen::Index q = pick(rng, 1, 5);
    const Configuration cfg = random_general_configuration(rng, q, 1, 1, static_cast<std::size_t>(pick(rng, 1, 12)));
    return rhs_difference(effective_rhs(cfg.state, cfg.data, 0), moment_form_rhs(cfg.state, cfg.data, 0));
  });
  s.property("general_vs_effective_rhs", 100, 1e-10, [](Rng& rng) {
    const Configuration cfg = random_separated_configuration(rng, pick(rng, 2, 5), static_cast<std::size_t>(pick(rng, 1, 8)));
    const auto g = general_rhs(cfg.state, cfg.data);
    double d = 0.0;
    for (std::size_t l = 0; l < g.size(); ++l) d = std::max(d, rhs_difference(g[l], effective_rhs(cfg.state, cfg.data, l)));
    return d;
  });
  s.property("chained_projectors", 200, 1e-10, [](Rng& rng) {
    const Eigen::Index q = pick(rng, 1, 5);
    const auto layers = static_cast<std::size_t>(pick(rng, 1, 4));
    const Configuration cfg = random_general_configuration(rng, q, layers, 1, 1);
    const auto from = static_cast<std::size_t>(pick(rng, 0, static_cast<Eigen::Index>(layers)));
    const auto to = static_cast<std::size_t>(pick(rng, static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(layers)));
    const Vector x = 2.0 * gaussian_matrix(rng, q, 1).col(0);
    const ChainProjectors cp = chained_projectors(cfg.state.layers(), x, from, to);
    Vector rec = cp.p_plus * x;
    for (std::size_t k = from; k < to; ++k) rec -= cp.p_minus[k - from] * cfg.state.layer(k).beta;
    return (rec - chained_truncation(cfg.state.layers(), x, from, to)).norm();
  });
  s.property("general_vs_effective_trajectory", 100, 1e-6, [](Rng& rng) {
    const Configuration cfg = random_separated_configuration(rng, pick(rng, 2, 3), static_cast<std::size_t>(pick(rng, 2, 5)),
                                                             0.5, LabelPlacement::NearCluster);
    const Trajectory te = integrate_effective(cfg.state, cfg.data, 1.0);
    const Trajectory tg = integrate_general(cfg.state, cfg.data, 1.0);
    return state_difference(te.final_sample().state, tg.final_sample().state);
  });
}

// ---- one-dimensional ladder -------------------------------------------------

struct OneDimCase {
  std::vector<double> points;
  double y = 0.0;
  double b0 = 0.0;
};

inline OneDimCase random_one_dim_case(Rng& rng) {
  OneDimCase c;
  const auto n = static_cast<std::size_t>(pick(rng, 2, 6));
  double x = uniform(rng, -2.0, 2.0);
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back(x);
    x += uniform(rng, 0.3, 1.5);
  }
  c.y = c.points.back() + uniform(rng, 0.5, 3.0);
  const auto k = static_cast<std::size_t>(pick(rng, 0, static_cast<Eigen::Index>(n) - 2));
  c.b0 = c.points[k] + uniform(rng, 0.0, 0.5) * (c.points[k + 1] - c.points[k]);
  return c;
}

/// Integrated Q = 1 flow for a 1-D instance (R = 1, W_out = 1).
inline Trajectory integrate_one_dim(const OneDimCase& c, double s_end, const StepOptions& opts = {}) {
  Cluster cl;
  for (double x : c.points) cl.push_back(Vector::Constant(1, x));
  const TrainingSet data(1, {cl});
  const ModelState st({LayerParams(OrthogonalMatrix::identity(1), Vector::Constant(1, -c.b0))}, Matrix::Identity(1, 1),
                      {Vector::Constant(1, c.y)});
  return integrate_effective(st, data, s_end, opts);
}

/// Worst relative deviation of fitted segment exponents from n/N; -1 when no segment is long enough to fit.
inline double ladder_rate_error(const Trajectory& t, const OneDimSolution& sol) {
  double worst = -1.0;
  for (const auto& f : segment_fits(t)) {
    if (!f.beta_gap_exponents.front()) continue;
    const double mid = 0.5 * (f.s_start + f.s_stop);
    const OneDimSegment* seg = &sol.segments.front();
    for (const auto& g : sol.segments)
      if (mid >= g.s_start) seg = &g;
    worst = std::max(worst, std::abs(*f.beta_gap_exponents.front() - seg->rate) / seg->rate);
  }
  return worst;
}

inline void oned_suite(SuiteRunner& s) {
  s.properties({{"event_times", 1e-6}, {"segment_rates", 1e-2}, {"closed_form_gap", 1e-6}}, 100, [](Rng& rng) {
    const OneDimCase c = random_one_dim_case(rng);
    const OneDimSolution sol = one_dim_flow(c.points, c.y, c.b0, c.points.size());
    const double s_end = (sol.event_times.empty() ? 0.0 : sol.event_times.back()) + 1.0;
    const Trajectory t = integrate_one_dim(c, s_end);
    double ev = 0.0;
    if (t.events.size() != sol.event_times.size()) {
      ev = std::numeric_limits<double>::infinity();
    } else {
      for (std::size_t k = 0; k < t.events.size(); ++k) ev = std::max(ev, std::abs(t.events[k].s - sol.event_times[k]));
    }
    double gap = 0.0;
    for (const auto& smp : t.samples) gap = std::max(gap, std::abs(smp.per_layer[0].beta_gap - sol.gap(smp.s)));
    return std::vector<double>{ev, ladder_rate_error(t, sol), gap};
  });
}

}  // namespace detail

/// Runs one suite ("all" runs every suite).
inline VerifyReport verify(const std::string& suite, const VerifyOptions& opts = {}) {
  const auto& known = verify_suites();
  if (suite != "all" && std::find(known.begin(), known.end(), suite) == known.end())
    throw ConfigError("verify: unknown suite '" + suite + "'");
  VerifyReport rep{suite, opts.seed, {}};
  for (const auto& name : known) {
    if (suite != "all" && suite != name) continue;
    detail::SuiteRunner s(name, opts);
    if (name == "gradients") detail::gradients_suite(s);
    if (name == "monotonicity") detail::monotonicity_suite(s);
    if (name == "conservation") detail::conservation_suite(s);
    if (name == "equivalence") detail::equivalence_suite(s);
    if (name == "oned") detail::oned_suite(s);
    for (auto& p : s.results()) rep.properties.push_back(std::move(p));
  }
  return rep;
}

}  // namespace truncflow
