#pragma once

// Scenario configuration, training-set documents and trajectory export.
//
// Everything is a single JSON document; matrices are row-major nested arrays.
//
//   {
//     "q": 2, "l": 2, "mode": "effective",
//     "data": { "q": 2, "clusters": [[[x, y], ...], ...], "labels": [[y0, y1], ...] }  or "data.json",
//     "output_map": [[1, 0], [0, 1]],
//     "init": "random-orthogonal(7)"  or  { "layers": [{ "rotation": [[...]], "beta": [...] }] }
//             or { "b": M, "w": M, "y": M } (collapsed)  or { "w0": M, "x0": M, "y_ext": M } (clustered),
//     "s_end": 5.0,
//     "tolerances": { "atol": 1e-9, "rtol": 1e-7, ... },
//     "output": "out/run"
//   }
//
// A relative data path is resolved against the directory of the config file.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "truncflow/closed_form.hpp"
#include "truncflow/errors.hpp"
#include "truncflow/integrate.hpp"
#include "truncflow/model.hpp"
#include "truncflow/scenarios.hpp"
#include "truncflow/training_set.hpp"

namespace truncflow {

using Json = nlohmann::json;

// ---- numbers, vectors, matrices -------------------------------------------

/// %.17g
inline std::string format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Vector vector_from_json(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(field + ": entry " + std::to_string(i) + " is not a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Matrix matrix_from_json(const Json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field + ": expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ConfigError(field + ": rows must be non-empty arrays");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector row = vector_from_json(j[i], field + "[" + std::to_string(i) + "]");
    if (static_cast<std::size_t>(row.size()) != cols) throw ConfigError(field + ": ragged rows");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

// ---- training sets ----------------------------------------------------------

/// Training set plus its labels, as stored in a data document.
struct LabeledData {
  TrainingSet data;
  std::vector<Vector> labels;
};

inline Json to_json(const LabeledData& d) {
  Json clusters = Json::array();
  for (const auto& c : d.data.clusters()) {
    Json pts = Json::array();
    for (const auto& x : c) pts.push_back(to_json(x));
    clusters.push_back(std::move(pts));
  }
  Json labels = Json::array();
  for (const auto& y : d.labels) labels.push_back(to_json(y));
  return Json{{"q", d.data.dim()}, {"clusters", std::move(clusters)}, {"labels", std::move(labels)}};
}

inline LabeledData labeled_data_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("data: expected an object with q, clusters, labels");
  for (const char* key : {"q", "clusters", "labels"})
    if (!j.contains(key)) throw ConfigError(std::string("data.") + key + ": missing");
  if (!j["q"].is_number_integer() || j["q"].get<long long>() < 1) throw ConfigError("data.q: must be an integer >= 1");
  const auto q = static_cast<Eigen::Index>(j["q"].get<long long>());
  if (!j["clusters"].is_array()) throw ConfigError("data.clusters: expected an array");
  std::vector<Cluster> clusters;
  for (std::size_t c = 0; c < j["clusters"].size(); ++c) {
    const Json& pts = j["clusters"][c];
    const std::string where = "data.clusters[" + std::to_string(c) + "]";
    if (!pts.is_array()) throw ConfigError(where + ": expected an array of points");
    Cluster cl;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Vector x = vector_from_json(pts[i], where + "[" + std::to_string(i) + "]");
      if (x.size() != q) throw ConfigError(where + "[" + std::to_string(i) + "]: length != q");
      cl.push_back(std::move(x));
    }
    clusters.push_back(std::move(cl));
  }
  std::vector<Vector> labels;
  for (std::size_t c = 0; c < j["labels"].size(); ++c) {
    Vector y = vector_from_json(j["labels"][c], "data.labels[" + std::to_string(c) + "]");
    if (y.size() != q) throw ConfigError("data.labels[" + std::to_string(c) + "]: length != q");
    labels.push_back(std::move(y));
  }
  if (labels.size() != clusters.size()) throw ConfigError("data.labels: one label per cluster required");
  try {
    return LabeledData{TrainingSet(q, std::move(clusters)), std::move(labels)};
  } catch (const Error& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline LabeledData load_labeled_data(const std::filesystem::path& path) { return labeled_data_from_json(read_json_file(path)); }

// ---- scenario config --------------------------------------------------------

enum class Mode { Effective, General, Collapsed, Clustered, OneDim };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::Effective: return "effective";
    case Mode::General: return "general";
    case Mode::Collapsed: return "collapsed";
    case Mode::Clustered: return "clustered";
    case Mode::OneDim: return "oned";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::Effective, Mode::General, Mode::Collapsed, Mode::Clustered, Mode::OneDim})
    if (s == to_string(m)) return m;
  throw ConfigError("mode: unknown value '" + s + "' (effective | general | collapsed | clustered | oned)");
}

/// "identity", "random-orthogonal(seed)", "fully-truncated[(margin)]", "all-positive[(margin)]".
struct NamedInit {
  InitKind kind = InitKind::Identity;
  std::uint64_t seed = 0;
  std::optional<double> margin;
};

struct ExplicitLayers {
  std::vector<LayerParams> layers;
};

struct CollapsedInit {
  Matrix b;
  Matrix w;
  Matrix y;
};

struct ClusteredInit {
  Matrix w0;
  Matrix x0;
  Matrix y_ext;
};

using InitSpec = std::variant<NamedInit, ExplicitLayers, CollapsedInit, ClusteredInit>;
using DataSource = std::variant<std::monostate, LabeledData, std::string>;

struct Tolerances {
  std::optional<double> atol, rtol, initial_step, max_step, min_step, event_tol, monotone_tol;
  std::optional<std::size_t> max_steps;

  StepOptions apply(StepOptions o = {}) const {
    if (atol) o.atol = *atol;
    if (rtol) o.rtol = *rtol;
    if (initial_step) o.initial_step = *initial_step;
    if (max_step) o.max_step = *max_step;
    if (min_step) o.min_step = *min_step;
    if (event_tol) o.event_tol = *event_tol;
    if (monotone_tol) o.monotone_tol = *monotone_tol;
    if (max_steps) o.max_steps = *max_steps;
    return o;
  }
};

struct ScenarioConfig {
  Eigen::Index q = 1;
  std::optional<std::size_t> l;
  Mode mode = Mode::Effective;
  DataSource data;
  std::optional<Matrix> output_map;
  InitSpec init;
  double s_end = 1.0;
  Tolerances tolerances;
  std::string output = "out";
  std::filesystem::path base_dir;  // not serialized

  std::size_t layer_count() const { return l.value_or(static_cast<std::size_t>(q)); }
};

inline std::string to_string(const NamedInit& n) {
  switch (n.kind) {
    case InitKind::Identity: return "identity";
    case InitKind::RandomOrthogonal: return "random-orthogonal(" + std::to_string(n.seed) + ")";
    case InitKind::FullyTruncated:
      return n.margin ? "fully-truncated(" + format17(*n.margin) + ")" : "fully-truncated";
    case InitKind::AllPositive: return n.margin ? "all-positive(" + format17(*n.margin) + ")" : "all-positive";
  }
  return "?";
}

inline NamedInit named_init_from_string(const std::string& s) {
  static const std::regex re(R"(^\s*([a-z-]+)\s*(?:\(\s*([^)]*?)\s*\))?\s*$)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw ConfigError("init: cannot parse generator '" + s + "'");
  const std::string name = m[1];
  const std::string arg = m[2];
  NamedInit out;
  try {
    if (name == "identity" && arg.empty()) {
      out.kind = InitKind::Identity;
    } else if (name == "random-orthogonal" && !arg.empty()) {
      out.kind = InitKind::RandomOrthogonal;
      if (arg.find_first_not_of("0123456789") != std::string::npos) throw ConfigError("");
      out.seed = std::stoull(arg);
    } else if (name == "fully-truncated" || name == "all-positive") {
      out.kind = name == "fully-truncated" ? InitKind::FullyTruncated : InitKind::AllPositive;
      if (!arg.empty()) {
        std::size_t used = 0;
        out.margin = std::stod(arg, &used);
        if (used != arg.size()) throw ConfigError("");
      }
    } else {
      throw ConfigError("");
    }
  } catch (const std::exception&) {
    throw ConfigError("init: unknown generator '" + s +
                      "' (identity | random-orthogonal(seed) | fully-truncated[(margin)] | all-positive[(margin)])");
  }
  return out;
}

inline Json to_json(const Tolerances& t) {
  Json j = Json::object();
  const auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("atol", t.atol);
  put("rtol", t.rtol);
  put("initial_step", t.initial_step);
  put("max_step", t.max_step);
  put("min_step", t.min_step);
  put("event_tol", t.event_tol);
  put("monotone_tol", t.monotone_tol);
  if (t.max_steps) j["max_steps"] = *t.max_steps;
  return j;
}

inline Tolerances tolerances_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("tolerances: expected an object");
  Tolerances t;
  for (const auto& [key, val] : j.items()) {
    if (key == "max_steps") {
      if (!val.is_number_integer() || val.get<long long>() < 1) throw ConfigError("tolerances.max_steps: positive integer");
      t.max_steps = val.get<std::size_t>();
      continue;
    }
    if (!val.is_number() || !(val.get<double>() > 0.0)) throw ConfigError("tolerances." + key + ": positive number");
    const double v = val.get<double>();
    if (key == "atol") t.atol = v;
    else if (key == "rtol") t.rtol = v;
    else if (key == "initial_step") t.initial_step = v;
    else if (key == "max_step") t.max_step = v;
    else if (key == "min_step") t.min_step = v;
    else if (key == "event_tol") t.event_tol = v;
    else if (key == "monotone_tol") t.monotone_tol = v;
    else throw ConfigError("tolerances." + key + ": unknown field");
  }
  return t;
}

inline Json to_json(const InitSpec& init) {
  return std::visit(
      [](const auto& v) -> Json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, NamedInit>) {
          return to_string(v);
        } else if constexpr (std::is_same_v<T, ExplicitLayers>) {
          Json layers = Json::array();
          for (const auto& lp : v.layers) layers.push_back(Json{{"rotation", to_json(lp.r())}, {"beta", to_json(lp.beta)}});
          return Json{{"layers", std::move(layers)}};
        } else if constexpr (std::is_same_v<T, CollapsedInit>) {
          return Json{{"b", to_json(v.b)}, {"w", to_json(v.w)}, {"y", to_json(v.y)}};
        } else {
          return Json{{"w0", to_json(v.w0)}, {"x0", to_json(v.x0)}, {"y_ext", to_json(v.y_ext)}};
        }
      },
      init);
}

inline InitSpec init_from_json(const Json& j) {
  if (j.is_string()) return named_init_from_string(j.get<std::string>());
  if (!j.is_object()) throw ConfigError("init: expected a generator string or an object");
  if (j.contains("layers")) {
    if (!j["layers"].is_array() || j["layers"].empty()) throw ConfigError("init.layers: expected a non-empty array");
    ExplicitLayers out;
    for (std::size_t l = 0; l < j["layers"].size(); ++l) {
      const Json& lj = j["layers"][l];
      const std::string where = "init.layers[" + std::to_string(l) + "]";
      if (!lj.is_object() || !lj.contains("rotation") || !lj.contains("beta"))
        throw ConfigError(where + ": needs rotation and beta");
      try {
        out.layers.emplace_back(OrthogonalMatrix(matrix_from_json(lj["rotation"], where + ".rotation")),
                                vector_from_json(lj["beta"], where + ".beta"));
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
    return out;
  }
  if (j.contains("b") && j.contains("w") && j.contains("y"))
    return CollapsedInit{matrix_from_json(j["b"], "init.b"), matrix_from_json(j["w"], "init.w"),
                         matrix_from_json(j["y"], "init.y")};
  if (j.contains("w0") && j.contains("x0") && j.contains("y_ext"))
    return ClusteredInit{matrix_from_json(j["w0"], "init.w0"), matrix_from_json(j["x0"], "init.x0"),
                         matrix_from_json(j["y_ext"], "init.y_ext")};
  throw ConfigError("init: object needs layers, or b/w/y, or w0/x0/y_ext");
}

inline Json to_json(const ScenarioConfig& c) {
  Json j{{"q", c.q}, {"mode", to_string(c.mode)}, {"init", to_json(c.init)}, {"s_end", c.s_end}, {"output", c.output}};
  if (c.l) j["l"] = *c.l;
  if (const auto* d = std::get_if<LabeledData>(&c.data)) j["data"] = to_json(*d);
  if (const auto* p = std::get_if<std::string>(&c.data)) j["data"] = *p;
  if (c.output_map) j["output_map"] = to_json(*c.output_map);
  const Json tol = to_json(c.tolerances);
  if (!tol.empty()) j["tolerances"] = tol;
  return j;
}

inline void validate(const ScenarioConfig& c);

inline ScenarioConfig config_from_json(const Json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::vector<std::string> known{"q", "l", "mode", "data", "output_map", "init", "s_end", "tolerances", "output"};
  for (const auto& [key, val] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError(key + ": unknown field");
  for (const char* key : {"q", "mode", "init", "s_end"})
    if (!j.contains(key)) throw ConfigError(std::string(key) + ": missing");

  ScenarioConfig c;
  c.base_dir = base_dir;
  if (!j["q"].is_number_integer()) throw ConfigError("q: expected an integer");
  c.q = static_cast<Eigen::Index>(j["q"].get<long long>());
  if (j.contains("l")) {
    if (!j["l"].is_number_integer() || j["l"].get<long long>() < 1) throw ConfigError("l: expected a positive integer");
    c.l = j["l"].get<std::size_t>();
  }
  if (!j["mode"].is_string()) throw ConfigError("mode: expected a string");
  c.mode = mode_from_string(j["mode"].get<std::string>());
  if (j.contains("data")) {
    if (j["data"].is_string())
      c.data = j["data"].get<std::string>();
    else
      c.data = labeled_data_from_json(j["data"]);
  }
  if (j.contains("output_map")) c.output_map = matrix_from_json(j["output_map"], "output_map");
  c.init = init_from_json(j["init"]);
  if (!j["s_end"].is_number()) throw ConfigError("s_end: expected a number");
  c.s_end = j["s_end"].get<double>();
  if (j.contains("tolerances")) c.tolerances = tolerances_from_json(j["tolerances"]);
  if (j.contains("output")) {
    if (!j["output"].is_string()) throw ConfigError("output: expected a path string");
    c.output = j["output"].get<std::string>();
  }
  validate(c);
  return c;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_json_file(path), path.parent_path());
}

/// Loads a path-valued data source relative to base_dir.
inline LabeledData resolve_data(const ScenarioConfig& c) {
  if (const auto* d = std::get_if<LabeledData>(&c.data)) return *d;
  if (const auto* p = std::get_if<std::string>(&c.data)) {
    std::filesystem::path path(*p);
    if (path.is_relative() && !c.base_dir.empty()) path = c.base_dir / path;
    return load_labeled_data(path);
  }
  throw ConfigError("data: required for mode " + std::string(to_string(c.mode)));
}

inline void validate(const ScenarioConfig& c) {
  if (c.q < 1) throw ConfigError("q: must be >= 1");
  if (!(c.s_end > 0.0) || !std::isfinite(c.s_end)) throw ConfigError("s_end: must be positive and finite");
  if (c.output.empty()) throw ConfigError("output: must be a non-empty path");
  if (c.output_map && (c.output_map->rows() != c.q || c.output_map->cols() != c.q))
    throw ConfigError("output_map: must be q x q");
  const bool layered = c.mode == Mode::Effective || c.mode == Mode::General || c.mode == Mode::OneDim;
  if (layered) {
    if (std::holds_alternative<std::monostate>(c.data)) throw ConfigError("data: required for mode " + std::string(to_string(c.mode)));
    if (const auto* d = std::get_if<LabeledData>(&c.data); d && d->data.dim() != c.q) throw ConfigError("data.q: differs from q");
    if (!std::holds_alternative<NamedInit>(c.init) && !std::holds_alternative<ExplicitLayers>(c.init))
      throw ConfigError("init: mode " + std::string(to_string(c.mode)) + " needs a generator or explicit layers");
    if (const auto* e = std::get_if<ExplicitLayers>(&c.init)) {
      if (c.l && e->layers.size() != *c.l) throw ConfigError("init.layers: count differs from l");
      for (const auto& lp : e->layers)
        if (lp.dim() != c.q) throw ConfigError("init.layers: dimension differs from q");
    }
  }
  if (c.mode == Mode::OneDim && (c.q != 1 || c.layer_count() != 1)) throw ConfigError("mode: oned needs q = 1 and l = 1");
  if (c.mode == Mode::Collapsed) {
    const auto* ci = std::get_if<CollapsedInit>(&c.init);
    if (!ci) throw ConfigError("init: mode collapsed needs b, w, y");
    for (const Matrix* m : {&ci->b, &ci->w, &ci->y})
      if (m->rows() != c.q || m->cols() != c.q) throw ConfigError("init: collapsed b, w, y must be q x q");
  }
  if (c.mode == Mode::Clustered) {
    const auto* ci = std::get_if<ClusteredInit>(&c.init);
    if (!ci) throw ConfigError("init: mode clustered needs w0, x0, y_ext");
    if (ci->w0.rows() != c.q || ci->w0.cols() != c.q) throw ConfigError("init.w0: must be q x q");
    if (ci->x0.rows() != c.q) throw ConfigError("init.x0: must have q rows");
    if (ci->y_ext.rows() != c.q || ci->y_ext.cols() != ci->x0.cols()) throw ConfigError("init.y_ext: must match x0's shape");
  }
}

/// Initial layers for the layered modes.
inline std::vector<LayerParams> initial_layers(const ScenarioConfig& c, const TrainingSet& data) {
  const std::size_t l = c.layer_count();
  if (const auto* e = std::get_if<ExplicitLayers>(&c.init)) return e->layers;
  const auto& n = std::get<NamedInit>(c.init);
  switch (n.kind) {
    case InitKind::Identity: return init_identity(c.q, l);
    case InitKind::RandomOrthogonal: return init_random_orthogonal(c.q, l, n.seed);
    case InitKind::FullyTruncated: return init_fully_truncated(data, l, n.margin.value_or(1.0));
    case InitKind::AllPositive: return init_all_positive(data, l, n.margin.value_or(1.0));
  }
  throw ConfigError("init: unknown generator");
}

// ---- CSV export -------------------------------------------------------------

inline void write_trajectory_csv(std::ostream& out, const Trajectory& t) {
  out << "s,cost";
  const std::size_t layers = t.samples.empty() ? 0 : t.samples.front().per_layer.size();
  for (std::size_t l = 0; l < layers; ++l) {
    out << ",beta_gap_" << l << ",omega_norm_" << l;
    for (std::size_t r = 0; r < t.samples.front().per_layer[l].truncated_counts.size(); ++r) out << ",n_" << l << "_" << r;
  }
  out << "\n";
  for (const auto& smp : t.samples) {
    out << format17(smp.s) << "," << format17(smp.cost);
    for (const auto& d : smp.per_layer) {
      out << "," << format17(d.beta_gap) << "," << format17(d.omega_norm);
      for (std::size_t n : d.truncated_counts) out << "," << n;
    }
    out << "\n";
  }
}

inline void write_events_csv(std::ostream& out, const std::vector<Event>& events) {
  out << "s,layer,cluster,point,coordinate,direction\n";
  for (const auto& e : events)
    out << format17(e.s) << "," << e.layer << "," << e.point.cluster << "," << e.point.index << "," << e.coordinate << ","
        << to_string(e.direction) << "\n";
}

inline void write_collapsed_csv(std::ostream& out, const CollapsedTrajectory& t) {
  out << "s,cost,invariant_drift\n";
  const Matrix& i0 = t.samples.front().invariant;
  for (const auto& smp : t.samples)
    out << format17(smp.s) << "," << format17(smp.cost) << "," << format17((smp.invariant - i0).norm()) << "\n";
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("output: cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("output: write failed for " + path.string());
}

}  // namespace truncflow
