#pragma once

// Scenario runner behind `truncflow run`. Writes trajectory.csv, events.csv
// and summary.json into the configured output directory.
//
// Exit codes: 0 success, 2 validation failure, 3 StepUnderflow.

#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "truncflow/closed_form.hpp"
#include "truncflow/integrate.hpp"
#include "truncflow/io.hpp"
#include "truncflow/oracle.hpp"

namespace truncflow {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitUnderflow = 3;

/// Threshold under which ||Omega|| counts as zero for the s1 estimate.
inline constexpr double kOmegaZero = 1e-10;

struct RunResult {
  int exit_code = kExitOk;
  std::string message;
  std::filesystem::path output;
  Json summary;
};

// ---- fits -------------------------------------------------------------------

/// Least-squares slope of log(v) against s over the pairs with v > 0.
/// Empty with fewer than three usable points.
inline std::optional<double> fit_log_slope(const std::vector<std::pair<double, double>>& sv) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [s, v] : sv) {
    if (!(v > 0.0) || !std::isfinite(v)) continue;
    const double ly = std::log(v);
    n += 1;
    sx += s;
    sy += ly;
    sxx += s * s;
    sxy += s * ly;
  }
  const double den = n * sxx - sx * sx;
  if (n < 3 || !(std::abs(den) > 0.0)) return std::nullopt;
  return (n * sxy - sx * sy) / den;
}

struct SegmentFit {
  double s_start = 0.0;
  double s_stop = 0.0;
  std::optional<double> cost_exponent;
  std::vector<std::optional<double>> beta_gap_exponents;
};

/// Decay exponents (minus the log slope) fitted over the trailing half of
/// every inter-event segment.
inline std::vector<SegmentFit> segment_fits(const Trajectory& t) {
  std::vector<double> cuts{t.samples.front().s};
  for (const auto& e : t.events)
    if (e.s > cuts.back()) cuts.push_back(e.s);
  if (t.samples.back().s > cuts.back()) cuts.push_back(t.samples.back().s);

  const std::size_t layers = t.samples.front().per_layer.size();
  std::vector<SegmentFit> out;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    SegmentFit f{cuts[k], cuts[k + 1], std::nullopt, {}};
    const double from = 0.5 * (cuts[k] + cuts[k + 1]);
    std::vector<std::pair<double, double>> cost;
    std::vector<std::vector<std::pair<double, double>>> gaps(layers);
    for (const auto& smp : t.samples) {
      if (smp.s < from || smp.s > cuts[k + 1]) continue;
      cost.emplace_back(smp.s, smp.cost);
      for (std::size_t l = 0; l < layers; ++l) gaps[l].emplace_back(smp.s, smp.per_layer[l].beta_gap);
    }
    if (auto sl = fit_log_slope(cost)) f.cost_exponent = -*sl;
    for (std::size_t l = 0; l < layers; ++l) {
      const auto sl = fit_log_slope(gaps[l]);
      f.beta_gap_exponents.push_back(sl ? std::optional<double>(-*sl) : std::nullopt);
    }
    out.push_back(std::move(f));
  }
  return out;
}

/// Per layer: first sample time from which ||Omega|| stays <= kOmegaZero to the end.
inline std::vector<std::optional<double>> omega_zero_times(const Trajectory& t) {
  const std::size_t layers = t.samples.front().per_layer.size();
  std::vector<std::optional<double>> out(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    for (auto it = t.samples.rbegin(); it != t.samples.rend(); ++it) {
      if (it->per_layer[l].omega_norm > kOmegaZero) break;
      out[l] = it->s;
    }
  }
  return out;
}

/// max over samples and layers of ||R^T R - 1||_F
inline double max_orthogonality_drift(const Trajectory& t) {
  double d = 0.0;
  for (const auto& smp : t.samples)
    for (const auto& lp : smp.state.layers()) d = std::max(d, orthogonality_defect(lp.r()));
  return d;
}

/// max over consecutive samples of (c_{k+1} - c_k) / (1 + c_k)
inline double max_cost_increase(const Trajectory& t) {
  double d = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < t.samples.size(); ++k)
    d = std::max(d, (t.samples[k].cost - t.samples[k - 1].cost) / (1.0 + t.samples[k - 1].cost));
  return t.samples.size() > 1 ? d : 0.0;
}

inline double max_cost_increase(const CollapsedTrajectory& t) {
  double d = 0.0;
  for (std::size_t k = 1; k < t.samples.size(); ++k)
    d = std::max(d, (t.samples[k].cost - t.samples[k - 1].cost) / (1.0 + t.samples[k - 1].cost));
  return d;
}

/// Log-cost slope of a collapsed run over s in [lo, hi].
inline std::optional<double> collapsed_log_cost_slope(const CollapsedTrajectory& t, double lo, double hi) {
  std::vector<std::pair<double, double>> sv;
  for (const auto& smp : t.samples)
    if (smp.s >= lo && smp.s <= hi) sv.emplace_back(smp.s, smp.cost);
  return fit_log_slope(sv);
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const ModelState& st) {
  Json layers = Json::array();
  for (const auto& lp : st.layers()) layers.push_back(Json{{"rotation", to_json(lp.r())}, {"beta", to_json(lp.beta)}});
  Json labels = Json::array();
  for (const auto& y : st.labels()) labels.push_back(to_json(y));
  return Json{{"layers", std::move(layers)}, {"output_map", to_json(st.output_map())}, {"labels", std::move(labels)}};
}

// ---- modes ------------------------------------------------------------------

namespace detail {

inline Json layered_summary(const Trajectory& t) {
  Json segs = Json::array();
  for (const auto& f : segment_fits(t)) {
    Json gaps = Json::array();
    for (const auto& g : f.beta_gap_exponents) gaps.push_back(optional_json(g));
    segs.push_back(Json{{"s_start", f.s_start}, {"s_stop", f.s_stop}, {"cost_exponent", optional_json(f.cost_exponent)},
                        {"beta_gap_exponents", std::move(gaps)}});
  }
  Json s1 = Json::array();
  for (const auto& v : omega_zero_times(t)) s1.push_back(optional_json(v));
  Json event_times = Json::array();
  for (const auto& e : t.events) event_times.push_back(e.s);
  return Json{{"initial_cost", t.samples.front().cost},
              {"final_cost", t.final_sample().cost},
              {"final_s", t.final_sample().s},
              {"final_state", to_json(t.final_sample().state)},
              {"samples", t.samples.size()},
              {"rejected_steps", t.rejected_steps},
              {"events", t.events.size()},
              {"event_times", std::move(event_times)},
              {"warnings", t.warnings},
              {"segments", std::move(segs)},
              {"s1", std::move(s1)},
              {"max_orthogonality_drift", max_orthogonality_drift(t)},
              {"max_cost_increase", max_cost_increase(t)}};
}

inline Json run_layered(const ScenarioConfig& c, const std::filesystem::path& out) {
  const LabeledData ld = resolve_data(c);
  if (ld.data.dim() != c.q) throw ConfigError("data.q: differs from q");
  const Matrix w_out = c.output_map.value_or(Matrix::Identity(c.q, c.q));
  const ModelState state0(initial_layers(c, ld.data), w_out, ld.labels);
  const StepOptions opts = c.tolerances.apply();

  Trajectory t = c.mode == Mode::General ? integrate_general(state0, ld.data, c.s_end, opts)
                                         : integrate_effective(state0, ld.data, c.s_end, opts);
  std::ostringstream traj, ev;
  write_trajectory_csv(traj, t);
  write_events_csv(ev, t.events);
  write_text_file(out / "trajectory.csv", traj.str());
  write_text_file(out / "events.csv", ev.str());

  Json summary = layered_summary(t);
  if (c.mode == Mode::OneDim) {
    const LayerParams& lp = state0.layer(0);
    if (!(lp.r()(0, 0) > 0.0)) throw ConfigError("init: oned needs R = +1");
    std::vector<double> pts;
    for (const auto& x : ld.data.cluster(0)) pts.push_back(x(0));
    std::sort(pts.begin(), pts.end());
    const OneDimSolution sol = one_dim_flow(pts, state0.pulled_label(0)(0), -lp.beta(0), pts.size());
    Json rates = Json::array();
    for (const auto& seg : sol.segments) rates.push_back(Json{{"s_start", seg.s_start}, {"rate", seg.rate}});
    summary["closed_form"] = Json{{"event_times", sol.event_times}, {"segments", std::move(rates)}, {"frozen", sol.frozen}};
  }
  return summary;
}

inline Json run_collapsed(const ScenarioConfig& c, const std::filesystem::path& out) {
  const auto& ci = std::get<CollapsedInit>(c.init);
  const CollapsedState cs0(ci.b, ci.w, ci.y);
  const CollapsedTrajectory t = integrate_collapsed(cs0, c.s_end, c.tolerances.apply());
  std::ostringstream traj;
  write_collapsed_csv(traj, t);
  write_text_file(out / "trajectory.csv", traj.str());
  write_text_file(out / "events.csv", "s,layer,cluster,point,coordinate,direction\n");
  const double lo = c.s_end / 3.0;
  const CollapsedState& fin = t.samples.back().state;
  return Json{{"initial_cost", t.samples.front().cost},
              {"final_cost", t.samples.back().cost},
              {"final_state", Json{{"b", to_json(fin.b_matrix)}, {"w", to_json(fin.w_out)}, {"y", to_json(fin.y_matrix)}}},
              {"initial_invariant", to_json(t.samples.front().invariant)},
              {"conservation_drift", t.relative_drift()},
              {"fit_window", {lo, c.s_end}},
              {"log_cost_slope", optional_json(collapsed_log_cost_slope(t, lo, c.s_end))},
              {"samples", t.samples.size()},
              {"rejected_steps", t.rejected_steps},
              {"max_cost_increase", max_cost_increase(t)}};
}

inline constexpr int kClusteredGrid = 200;

inline Json run_clustered(const ScenarioConfig& c, const std::filesystem::path& out) {
  const auto& ci = std::get<ClusteredInit>(c.init);
  const Matrix limit = ci.y_ext * range_projector(ci.x0);
  const auto field = [&](const Matrix& w) { return clustered_rhs(w, ci.x0, ci.y_ext); };
  std::ostringstream traj;
  traj << "s,distance_to_limit,reference_error\n";
  Matrix ref = ci.w0;
  double prev = 0.0;
  double worst = 0.0;
  std::vector<std::pair<double, double>> dist;
  for (int k = 0; k <= kClusteredGrid; ++k) {
    const double s = c.s_end * k / kClusteredGrid;
    if (k > 0) ref = reference_integrate(field, ref, s - prev);
    prev = s;
    const Matrix w = clustered_explicit(ci.w0, ci.x0, ci.y_ext, s);
    const double err = (w - ref).norm();
    worst = std::max(worst, err);
    dist.emplace_back(s, (w - limit).norm());
    traj << format17(s) << "," << format17(dist.back().second) << "," << format17(err) << "\n";
  }
  write_text_file(out / "trajectory.csv", traj.str());
  write_text_file(out / "events.csv", "s,layer,cluster,point,coordinate,direction\n");
  const std::vector<std::pair<double, double>> tail(dist.begin() + kClusteredGrid / 2, dist.end());
  const auto slope = fit_log_slope(tail);
  return Json{{"final_w", to_json(clustered_explicit(ci.w0, ci.x0, ci.y_ext, c.s_end))},
              {"limit", to_json(limit)},
              {"distance_to_limit", dist.back().second},
              {"max_reference_error", worst},
              {"decay_exponent", slope ? Json(-*slope) : Json(nullptr)}};
}

}  // namespace detail

/// Runs one scenario and writes its artifacts. Never throws.
inline RunResult run(const ScenarioConfig& c) {
  RunResult r;
  try {
    validate(c);
    r.output = c.output;
    std::error_code ec;
    std::filesystem::create_directories(r.output, ec);
    if (ec) throw ConfigError("output: cannot create " + r.output.string() + ": " + ec.message());
    switch (c.mode) {
      case Mode::Effective:
      case Mode::General:
      case Mode::OneDim: r.summary = detail::run_layered(c, r.output); break;
      case Mode::Collapsed: r.summary = detail::run_collapsed(c, r.output); break;
      case Mode::Clustered: r.summary = detail::run_clustered(c, r.output); break;
    }
    r.summary["mode"] = to_string(c.mode);
    r.summary["s_end"] = c.s_end;
    write_text_file(r.output / "summary.json", r.summary.dump(2) + "\n");
    r.message = "wrote " + r.output.string();
  } catch (const StepUnderflow& e) {
    r.exit_code = kExitUnderflow;
    r.message = e.what();
  } catch (const Error& e) {
    r.exit_code = kExitInvalid;
    r.message = e.what();
  } catch (const Json::exception& e) {
    r.exit_code = kExitInvalid;
    r.message = e.what();
  }
  return r;
}

/// Loads the config file, then run().
inline RunResult run_file(const std::filesystem::path& path) {
  try {
    return run(load_config(path));
  } catch (const Error& e) {
    return RunResult{kExitInvalid, e.what(), {}, {}};
  }
}

}  // namespace truncflow
