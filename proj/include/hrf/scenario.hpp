#pragma once

// JSON scenarios and the flow -> blow-down -> limit -> model -> certificate
// pipeline behind the hrf_lab command-line tool.

#include "hrf/geometric_model.hpp"
#include "hrf/soliton_check.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace hrf {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct FlowBlock {
  double t0 = -1.0;
  std::optional<double> t_backward;
  std::optional<double> t_forward;
  double rtol = 1e-10;
  double atol = 1e-12;
  std::vector<double> sample_times;
};

struct BlowdownBlock {
  std::vector<double> taus;
  double t_eval = -1.0;
  bool measure_epsilon = true;
};

struct ModelBlock {
  int radial_points = 40;
  int directions = 0;
  int order = 0;
  std::vector<double> taus;
};

struct OutputsBlock {
  std::string directory = "hrf_out";
  std::vector<std::string> formats{"csv", "json"};

  bool wants(const std::string& f) const { return std::find(formats.begin(), formats.end(), f) != formats.end(); }
};

struct Scenario {
  std::string name;
  std::string description;
  LieAlgebraData algebra;
  std::vector<Vec> h_basis;
  std::optional<double> diam_Q;
  double chart_radius = 2.0 * kPi;
  double period_factor = 1.0;
  Mat initial_metric;
  FlowBlock flow;
  std::optional<BlowdownBlock> blowdown;
  std::optional<ModelBlock> model;
  OutputsBlock outputs;
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline const json& require(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
  return j.at(key);
}

inline double as_number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

inline int as_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw ConfigError(where + ": expected an integer");
  return j.get<int>();
}

inline std::vector<double> as_numbers(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_number(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

inline Vec as_vector(const json& j, const std::string& where) {
  const auto v = as_numbers(j, where);
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Mat as_matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Mat m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Vec row = as_vector(j[static_cast<std::size_t>(i)], where + "[" + std::to_string(i) + "]");
    if (i == 0) m.resize(rows, row.size());
    if (row.size() != m.cols()) throw ConfigError(where + ": rows have different lengths");
    m.row(i) = row.transpose();
  }
  return m;
}

inline void check_increasing(const std::vector<double>& v, const std::string& where) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) throw ConfigError(where + ": values must be positive");
    if (i > 0 && !(v[i] > v[i - 1])) throw ConfigError(where + ": values must be increasing");
  }
}

inline LieAlgebraData parse_algebra(const json& a) {
  const int dim = as_int(require(a, "dim", "algebra"), "algebra.dim");
  if (dim < 1) throw ConfigError("algebra.dim must be >= 1");
  std::vector<StructureEntry> entries;
  if (a.contains("structure")) {
    const json& s = a.at("structure");
    if (!s.is_array()) throw ConfigError("algebra.structure: expected a list of [i, j, k, value]");
    for (std::size_t n = 0; n < s.size(); ++n) {
      const std::string w = "algebra.structure[" + std::to_string(n) + "]";
      if (!s[n].is_array() || s[n].size() != 4) throw ConfigError(w + ": expected [i, j, k, value]");
      StructureEntry e{as_int(s[n][0], w), as_int(s[n][1], w), as_int(s[n][2], w), as_number(s[n][3], w)};
      if (e.i < 0 || e.j < 0 || e.k < 0 || e.i >= dim || e.j >= dim || e.k >= dim)
        throw ConfigError(w + ": index out of range for dim " + std::to_string(dim));
      if (e.i >= e.j) throw ConfigError(w + ": entries must have i < j");
      entries.push_back(e);
    }
  }
  std::optional<Mat> q;
  if (a.contains("Q")) {
    const json& qj = a.at("Q");
    if (qj.is_string()) {
      if (qj.get<std::string>() != "identity") throw ConfigError("algebra.Q: expected \"identity\" or a matrix");
    } else {
      q = as_matrix(qj, "algebra.Q");
      if (q->rows() != dim || q->cols() != dim) throw ConfigError("algebra.Q must be dim x dim");
    }
  }
  // Dense storage keeps the entries as given, so a non-Jacobi input reaches validation.
  const auto n = static_cast<std::size_t>(dim);
  std::vector<double> c(n * n * n, 0.0);
  for (const auto& e : entries) {
    c[(static_cast<std::size_t>(e.i) * n + static_cast<std::size_t>(e.j)) * n + static_cast<std::size_t>(e.k)] = e.value;
    c[(static_cast<std::size_t>(e.j) * n + static_cast<std::size_t>(e.i)) * n + static_cast<std::size_t>(e.k)] = -e.value;
  }
  return LieAlgebraData(dim, std::move(c), q ? *q : Mat::Identity(dim, dim));
}

}  // namespace detail

/// Reads a scenario object. Shape and range problems raise ConfigError; the
/// algebraic checks are left to validate_scenario.
inline Scenario parse_scenario(const json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
  Scenario sc;
  sc.name = j.value("name", std::string("scenario"));
  sc.description = j.value("description", std::string());
  const json& a = require(j, "algebra", "scenario");
  sc.algebra = parse_algebra(a);
  const int n = sc.algebra.dim();

  auto read_h = [&](const json& block, const std::string& where) {
    if (!block.contains("h_basis")) return;
    const json& h = block.at("h_basis");
    if (!h.is_array()) throw ConfigError(where + ".h_basis: expected a list of vectors");
    sc.h_basis.clear();
    for (std::size_t i = 0; i < h.size(); ++i) {
      Vec v = as_vector(h[i], where + ".h_basis[" + std::to_string(i) + "]");
      if (v.size() != n) throw ConfigError(where + ".h_basis vectors must have algebra.dim entries");
      sc.h_basis.push_back(v);
    }
  };
  read_h(a, "algebra");
  if (j.contains("isotropy")) {
    const json& iso = j.at("isotropy");
    read_h(iso, "isotropy");
    if (iso.contains("diam_Q")) sc.diam_Q = as_number(iso.at("diam_Q"), "isotropy.diam_Q");
    if (iso.contains("chart_radius")) sc.chart_radius = as_number(iso.at("chart_radius"), "isotropy.chart_radius");
    if (iso.contains("period_factor"))
      sc.period_factor = as_number(iso.at("period_factor"), "isotropy.period_factor");
  }
  if (sc.diam_Q && !(*sc.diam_Q > 0.0)) throw ConfigError("isotropy.diam_Q must be positive");
  if (!(sc.chart_radius > 0.0)) throw ConfigError("isotropy.chart_radius must be positive");
  if (!(sc.period_factor > 0.0)) throw ConfigError("isotropy.period_factor must be positive");

  sc.initial_metric = as_matrix(require(j, "initial_metric", "scenario"), "initial_metric");
  const auto dim_m = static_cast<Eigen::Index>(n - static_cast<int>(sc.h_basis.size()));
  if (sc.initial_metric.rows() != dim_m || sc.initial_metric.cols() != dim_m)
    throw ConfigError("initial_metric must be " + std::to_string(dim_m) + "x" + std::to_string(dim_m) +
                      " (algebra.dim minus the number of h_basis vectors)");

  const json& f = require(j, "flow", "scenario");
  if (f.contains("t0")) sc.flow.t0 = as_number(f.at("t0"), "flow.t0");
  if (f.contains("t_backward")) sc.flow.t_backward = as_number(f.at("t_backward"), "flow.t_backward");
  if (f.contains("t_forward")) sc.flow.t_forward = as_number(f.at("t_forward"), "flow.t_forward");
  if (f.contains("rtol")) sc.flow.rtol = as_number(f.at("rtol"), "flow.rtol");
  if (f.contains("atol")) sc.flow.atol = as_number(f.at("atol"), "flow.atol");
  if (f.contains("sample_times")) sc.flow.sample_times = as_numbers(f.at("sample_times"), "flow.sample_times");
  if (!sc.flow.t_backward && !sc.flow.t_forward) throw ConfigError("flow needs t_backward or t_forward");
  if (sc.flow.t_backward && !(*sc.flow.t_backward < sc.flow.t0)) throw ConfigError("flow.t_backward must be < t0");
  if (sc.flow.t_forward && !(*sc.flow.t_forward > sc.flow.t0)) throw ConfigError("flow.t_forward must be > t0");
  if (!(sc.flow.rtol > 0.0) || !(sc.flow.atol > 0.0)) throw ConfigError("flow tolerances must be positive");

  if (j.contains("blowdown")) {
    const json& b = j.at("blowdown");
    BlowdownBlock bb;
    bb.taus = as_numbers(require(b, "taus", "blowdown"), "blowdown.taus");
    check_increasing(bb.taus, "blowdown.taus");
    if (bb.taus.size() < 3) throw ConfigError("blowdown.taus needs at least 3 values");
    if (b.contains("t_eval")) bb.t_eval = as_number(b.at("t_eval"), "blowdown.t_eval");
    if (!(bb.t_eval < 0.0)) throw ConfigError("blowdown.t_eval must be negative");
    if (b.contains("measure_epsilon")) {
      if (!b.at("measure_epsilon").is_boolean()) throw ConfigError("blowdown.measure_epsilon: expected a boolean");
      bb.measure_epsilon = b.at("measure_epsilon").get<bool>();
    }
    if (!sc.flow.t_backward) throw ConfigError("blowdown needs flow.t_backward");
    if (bb.taus.back() * bb.t_eval < *sc.flow.t_backward || bb.t_eval > sc.flow.t0)
      throw ConfigError("blowdown times tau * t_eval must lie in [flow.t_backward, flow.t0]");
    sc.blowdown = bb;
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    ModelBlock mb;
    if (m.contains("radial_points")) mb.radial_points = as_int(m.at("radial_points"), "model.radial_points");
    if (m.contains("directions")) mb.directions = as_int(m.at("directions"), "model.directions");
    if (m.contains("order")) mb.order = as_int(m.at("order"), "model.order");
    if (mb.radial_points < 2) throw ConfigError("model.radial_points must be >= 2");
    if (mb.directions < 0) throw ConfigError("model.directions must be >= 0");
    if (mb.order < 0 || mb.order > 2) throw ConfigError("model.order must be 0, 1 or 2");
    if (!sc.blowdown) throw ConfigError("model needs a blowdown block");
    mb.taus = m.contains("taus") ? as_numbers(m.at("taus"), "model.taus") : sc.blowdown->taus;
    check_increasing(mb.taus, "model.taus");
    if (mb.taus.empty()) throw ConfigError("model.taus must not be empty");
    if (mb.taus.back() * sc.blowdown->t_eval < *sc.flow.t_backward)
      throw ConfigError("model.taus reach beyond flow.t_backward");
    sc.model = mb;
  }

  if (j.contains("outputs")) {
    const json& o = j.at("outputs");
    if (o.contains("directory")) {
      if (!o.at("directory").is_string()) throw ConfigError("outputs.directory: expected a string");
      sc.outputs.directory = o.at("directory").get<std::string>();
    }
    if (o.contains("formats")) {
      if (!o.at("formats").is_array()) throw ConfigError("outputs.formats: expected a list");
      sc.outputs.formats.clear();
      for (const auto& x : o.at("formats")) {
        if (!x.is_string() || (x != "csv" && x != "json"))
          throw ConfigError("outputs.formats: entries must be \"csv\" or \"json\"");
        sc.outputs.formats.push_back(x.get<std::string>());
      }
    }
  }
  return sc;
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline Scenario load_scenario(const fs::path& path) { return parse_scenario(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline fs::path default_preset_dir() {
  if (const char* env = std::getenv("HRF_PRESET_DIR")) return env;
#ifdef HRF_PRESET_DIR
  return HRF_PRESET_DIR;
#else
  return "presets";
#endif
}

inline std::vector<std::string> list_presets(const fs::path& dir = default_preset_dir()) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) return names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

/// A file path, or the name of a preset in `dir`.
inline fs::path resolve_scenario(const std::string& arg, const fs::path& dir = default_preset_dir()) {
  if (fs::is_regular_file(arg)) return arg;
  const fs::path p = dir / (arg + ".json");
  if (fs::is_regular_file(p)) return p;
  throw ConfigError("no scenario file or preset named '" + arg + "'");
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ScenarioValidation {
  bool valid = false;
  std::vector<std::string> errors;
  ValidationReport algebra;
  SpacePtr space;
  double metric_min_eig = 0.0;
  double metric_invariance_defect = 0.0;

  json to_json() const {
    json j;
    j["valid"] = valid;
    j["errors"] = errors;
    j["algebra"] = {{"pass", algebra.pass},
                    {"antisymmetry_defect", algebra.antisymmetry_defect},
                    {"jacobi_defect", algebra.jacobi_defect},
                    {"ad_invariance_defect", algebra.ad_invariance_defect},
                    {"q_symmetry_defect", algebra.q_symmetry_defect},
                    {"q_min_eigenvalue", algebra.q_min_eigenvalue},
                    {"tolerance", algebra.tolerance}};
    if (space) {
      j["space"] = {{"dim_m", space->dim_m()}, {"dim_h", space->dim_h()}, {"dim_m0", space->m0().cols()},
                    {"reductivity_defect", space->reductivity_defect()}};
      j["metric"] = {{"min_eigenvalue", metric_min_eig}, {"invariance_defect", metric_invariance_defect}};
    }
    return j;
  }
};

inline ScenarioValidation validate_scenario(const Scenario& sc) {
  ScenarioValidation v;
  v.algebra = validate_structure(sc.algebra);
  if (!v.algebra.pass) {
    v.errors.push_back("Lie algebra data failed validation: " + v.algebra.summary());
    return v;
  }
  try {
    v.space = reductive_split(sc.algebra, sc.h_basis, sc.diam_Q, sc.chart_radius);
  } catch (const Error& e) {
    v.errors.push_back(e.what());
    return v;
  }
  const Mat& g = sc.initial_metric;
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, g.cwiseAbs().maxCoeff()))
    v.errors.push_back("initial_metric is not symmetric");
  v.metric_min_eig = min_eigenvalue(symmetrized(g));
  v.metric_invariance_defect = isotropy_invariance_defect(*v.space, symmetrized(g));
  if (!(v.metric_min_eig > 0.0)) v.errors.push_back("initial_metric is not positive definite");
  if (v.metric_invariance_defect > kInvarianceTol) v.errors.push_back("initial_metric is not Ad(H)-invariant");
  v.valid = v.errors.empty();
  return v;
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline json matrix_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) r.push_back(m(i, k));
    rows.push_back(r);
  }
  return rows;
}

inline json vector_json(const Vec& v) {
  json r = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) r.push_back(v(i));
  return r;
}

/// NaN and infinities become null.
inline json number_json(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string trajectory_csv(const FlowTrajectory& traj) {
  const int m = traj.dim();
  std::string out = "t";
  for (int i = 0; i < m; ++i)
    for (int k = i; k < m; ++k) out += ",g_" + std::to_string(i + 1) + std::to_string(k + 1);
  out += ",scal,Rm_norm,F,typeI_ratio,diam_over_sqrt_t,min_eig\n";
  for (std::size_t n = 0; n < traj.times.size(); ++n) {
    out += format_double(traj.times[n]);
    const Vec p = pack_symmetric(traj.metrics[n]);
    for (Eigen::Index i = 0; i < p.size(); ++i) out += "," + format_double(p(i));
    const auto& r = traj.monitors[n];
    for (double x : {r.scal, r.Rm_norm, r.F, r.typeI_ratio, r.diam_over_sqrt_t, r.min_eig}) out += "," + format_double(x);
    out += "\n";
  }
  return out;
}

inline json model_dump_json(const GeometricModel& model, double tau) {
  json j;
  j["dim"] = model.dim;
  j["tau"] = tau;
  j["grid"] = {{"radial_points", model.grid.radial_points},
               {"directions", model.grid.directions},
               {"radius", model.grid.radius},
               {"seed", model.grid.seed},
               {"rtol", model.grid.rtol}};
  j["kappa"] = model.kappa;
  j["seed"] = model.grid.seed;
  j["kind"] = model.kind;
  j["layout"] = "values[((direction * radial_points) + radius) * dim * dim + row * dim + col]";
  j["radii"] = model.radii;
  json dirs = json::array();
  for (const Vec& u : model.directions) dirs.push_back(vector_json(u));
  j["directions"] = dirs;
  std::vector<double> values;
  values.reserve(model.field.size() * model.radii.size() * static_cast<std::size_t>(model.dim * model.dim));
  for (const auto& ray : model.field)
    for (const Mat& g : ray)
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < g.cols(); ++c) values.push_back(g(r, c));
  j["values"] = values;
  return j;
}

inline json certificate_json(const SolitonCertificate& c) {
  return {{"pass", c.pass},
          {"lambda", c.lambda},
          {"einstein_residual", c.einstein_residual},
          {"eq_res", c.eq_res},
          {"scalsol_constant", c.scalsol_constant},
          {"scalsol_var", c.scalsol_var},
          {"killing_deviation", c.killing_deviation},
          {"s", c.s},
          {"reasons", c.reasons}};
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

enum class Stage { flow = 1, blowdown = 2, soliton = 3, model = 4, full = 5 };

inline constexpr int kExitCompleted = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitForwardSingularity = 3;

struct PipelineResult {
  int exit_code = kExitCompleted;
  json report;
  std::optional<FlowTrajectory> backward;
  std::optional<FlowTrajectory> forward;
  std::optional<LimitRecord> limit;
  std::optional<SolitonCertificate> certificate;
  std::vector<CompareResult> comparisons;
};

namespace detail {

inline json flow_json(const FlowTrajectory& traj) {
  json j;
  j["status"] = to_string(traj.status);
  j["t_start"] = traj.t_start;
  j["t_end"] = traj.t_end;
  j["t_star"] = traj.t_star ? json(*traj.t_star) : json(nullptr);
  j["accepted_steps"] = traj.accepted_steps;
  j["rejected_steps"] = traj.rejected_steps;
  j["samples"] = traj.times.size();
  j["max_invariance_defect"] = traj.max_invariance_defect;
  j["scal_positivity_violated"] = traj.scal_positivity_violated;
  if (traj.t_min() <= -1.0 && !traj.times.empty() && traj.times.front() <= -1.0) {
    const auto mon = monitors(traj);
    j["monitors"] = {{"typeI_min", mon.typeI_min},
                     {"typeI_max", mon.typeI_max},
                     {"F_monotone", mon.F_monotone},
                     {"min_normalized_dF", number_json(mon.min_normalized_dF)},
                     {"diam_over_sqrt_t_max", mon.diam_over_sqrt_t_max},
                     {"scal_positive", mon.scal_positive}};
  }
  if (traj.status == FlowStatus::completed && -traj.t_min() >= 1e3) {
    const auto a = classify_asymptotics(traj);
    j["asymptotics"] = {{"verdict", to_string(a.verdict)},
                        {"F_slope", number_json(a.slope)},
                        {"F_end", a.F_end},
                        {"F_ratio", a.F_ratio},
                        {"per_decade_change", a.per_decade_change}};
  }
  return j;
}

inline json blowdown_json(const BlowdownSequence& seq, const CollapseDetection& det, const LimitRecord& rec) {
  json j;
  j["taus"] = seq.taus;
  j["t_eval"] = seq.t_eval;
  j["s"] = det.s;
  json tb = json::array();
  for (const Vec& v : det.t_basis) tb.push_back(vector_json(v));
  j["t_basis"] = tb;
  j["eigen_decay"] = det.eigen_decay;
  j["rates"] = det.rates;
  j["drift"] = det.drift;
  j["g_check_infty"] = matrix_json(rec.g_check_infty);
  j["b_infty"] = matrix_json(rec.b_infty);
  j["einstein_lambda"] = rec.einstein_lambda;
  j["einstein_residual"] = rec.einstein_residual;
  j["scal_base"] = rec.scal_base;
  j["A_norm_sq_seq"] = rec.A_norm_sq_seq;
  j["dA_norm_seq"] = rec.dA_norm_seq;
  j["C_bound"] = rec.C_bound;
  j["epsilon_seq"] = rec.epsilon_seq;
  j["gh_seq"] = rec.gh_seq;
  j["epsilon_valid"] = rec.epsilon_valid;
  j["delta0_seq"] = rec.delta0_seq;
  j["g_hat_decay"] = rec.g_hat_decay;
  j["b_angle_seq"] = rec.b_angle_seq;
  j["g_check_change_seq"] = rec.g_check_change_seq;
  json ms = json::array();
  for (const auto& g : seq.metrics) ms.push_back(matrix_json(g.G()));
  j["metrics"] = ms;
  j["status"] = rec.status;
  j["reasons"] = rec.reasons;
  return j;
}

/// Closed-form or reference model of the limit R^s x (B, g_check).
inline std::optional<GeometricModel> reference_model(const LimitRecord& rec, const SpacePtr& space,
                                                     const GridSpec& spec, std::string& description) {
  const int dim = space->dim_m();
  if (rec.s == 0) {
    description = "model of the limit metric on the same space";
    return build_model(InvariantMetric::unchecked(space, rec.g_check_infty), spec);
  }
  const int base_dim = dim - rec.s;
  if (base_dim <= 1) {
    description = "Euclidean space";
    return product_model(dim, Mat::Identity(dim, dim), 1.0, spec);
  }
  const auto pkg = curvature_package(InvariantMetric::unchecked(rec.base_space, rec.g_check_infty));
  const double scale = std::max(std::abs(pkg.sec_min), std::abs(pkg.sec_max));
  if (scale < 1e-14) {
    description = "Euclidean space";
    return product_model(dim, Mat::Identity(dim, dim), 1.0, spec);
  }
  if (pkg.sec_min > 0.0 && pkg.sec_max - pkg.sec_min <= 1e-8 * scale) {
    description = "R^" + std::to_string(rec.s) + " x round S^" + std::to_string(base_dim);
    return product_model(dim, Mat::Identity(dim, rec.s), 1.0, spec);
  }
  description = "none: the limit base does not have constant positive curvature";
  return std::nullopt;
}

}  // namespace detail

/// Runs the pipeline up to `upto`, writing reports into `out_dir`. Exceptions
/// from the numerical stages are reported, not rethrown.
inline PipelineResult run_pipeline(const Scenario& sc, Stage upto, const fs::path& out_dir) {
  PipelineResult res;
  json& rep = res.report;
  rep["scenario"] = sc.name;
  rep["stages"] = json::object();
  fs::create_directories(out_dir);
  const bool csv = sc.outputs.wants("csv");
  const bool js = sc.outputs.wants("json");
  auto finish = [&](int code, const std::string& status) {
    res.exit_code = code;
    rep["status"] = status;
    rep["exit_code"] = code;
    write_json(out_dir / "report.json", rep);
    return res;
  };

  const auto v = validate_scenario(sc);
  rep["validation"] = v.to_json();
  if (!v.valid) return finish(kExitValidation, "validation_failure");
  const SpacePtr space = v.space;

  std::string stage = "flow";
  try {
    FlowControls ctl;
    ctl.rtol = sc.flow.rtol;
    ctl.atol = sc.flow.atol;
    ctl.sample_times = sc.flow.sample_times;
    const InvariantMetric g0(space, sc.initial_metric);
    json fj;
    if (sc.flow.t_backward) {
      res.backward = integrate_flow(g0, sc.flow.t0, *sc.flow.t_backward, ctl);
      fj["backward"] = detail::flow_json(*res.backward);
      if (csv) write_text(out_dir / "trajectory.csv", trajectory_csv(*res.backward));
    }
    if (sc.flow.t_forward) {
      res.forward = integrate_flow(g0, sc.flow.t0, *sc.flow.t_forward, ctl);
      fj["forward"] = detail::flow_json(*res.forward);
      if (csv) write_text(out_dir / "trajectory_forward.csv", trajectory_csv(*res.forward));
    }
    rep["stages"]["flow"] = fj;
    if (res.backward && res.backward->status != FlowStatus::completed) {
      rep["error"] = "backward run stopped at t = " + format_double(res.backward->t_end) + " (" +
                     to_string(res.backward->status) + ")";
      return finish(kExitNumerical, "numerical_failure");
    }
    const bool forward_singular = res.forward && res.forward->status == FlowStatus::hit_singularity;
    if (res.forward && res.forward->status == FlowStatus::step_failure) {
      rep["error"] = "forward run failed at t = " + format_double(res.forward->t_end);
      return finish(kExitNumerical, "numerical_failure");
    }
    const int done_code = forward_singular ? kExitForwardSingularity : kExitCompleted;
    const std::string done_status = forward_singular ? "forward_singularity" : "completed";

    if (upto == Stage::flow || !sc.blowdown) return finish(done_code, done_status);

    stage = "blowdown";
    const auto seq = blowdown_metrics(*res.backward, sc.blowdown->taus, sc.blowdown->t_eval);
    DetectionOptions dopt;
    dopt.period_factor = sc.period_factor;
    const auto det = detect_collapsing_torus(seq, dopt);
    LimitOptions lopt;
    lopt.measure_epsilon = sc.blowdown->measure_epsilon;
    res.limit = limit_triple(seq, det, lopt);
    const json bj = detail::blowdown_json(seq, det, *res.limit);
    rep["stages"]["blowdown"] = {{"status", res.limit->status}, {"s", det.s}};
    if (js) write_json(out_dir / "blowdown.json", bj);
    if (upto == Stage::blowdown) return finish(done_code, done_status);

    if (upto == Stage::soliton || upto == Stage::full) {
      stage = "soliton";
      res.certificate = rigidity_certificate(*res.limit);
      rep["stages"]["soliton"] = {{"pass", res.certificate->pass}, {"lambda", res.certificate->lambda}};
      if (js) write_json(out_dir / "certificate.json", certificate_json(*res.certificate));
      if (upto == Stage::soliton) return finish(done_code, done_status);
    }

    if (sc.model) {
      stage = "model";
      GridSpec spec;
      spec.radial_points = sc.model->radial_points;
      spec.directions = sc.model->directions;
      std::string description;
      const auto ref = detail::reference_model(*res.limit, space, spec, description);
      const auto mseq = blowdown_metrics(*res.backward, sc.model->taus, sc.blowdown->t_eval);
      CompareOptions copt;
      copt.order = sc.model->order;
      json mj;
      mj["reference"] = description;
      mj["order"] = copt.order;
      json entries = json::array();
      for (std::size_t i = 0; i < mseq.size(); ++i) {
        const auto model = build_model(mseq.metrics[i], spec);
        const std::string dump = "model_" + std::to_string(i) + ".json";
        if (js) write_json(out_dir / dump, model_dump_json(model, mseq.taus[i]));
        json e = {{"tau", mseq.taus[i]},
                  {"kappa", model.kappa},
                  {"gauss_defect", model.gauss_defect},
                  {"inner_euclidean_defect", model.inner_euclidean_defect},
                  {"reached_radius", model.reached_radius},
                  {"dump", dump}};
        if (ref) {
          const auto c = compare_models(model, *ref, copt);
          res.comparisons.push_back(c);
          e["distance"] = c.value;
          e["c0"] = c.c0;
          e["initial_c0"] = c.initial_c0;
          e["iterations"] = c.iterations;
          e["flagged"] = c.flagged;
        }
        entries.push_back(e);
      }
      mj["models"] = entries;
      bool nonincreasing = true;
      for (std::size_t i = 1; i < res.comparisons.size(); ++i)
        if (res.comparisons[i].value > 1.05 * res.comparisons[i - 1].value) nonincreasing = false;
      mj["nonincreasing"] = nonincreasing;
      rep["stages"]["model"] = {{"reference", description}, {"models", mseq.size()}};
      if (js) write_json(out_dir / "models.json", mj);
    }
    return finish(done_code, done_status);
  } catch (const Error& e) {
    rep["error"] = stage + ": " + e.what();
    return finish(kExitNumerical, "numerical_failure");
  }
}

}  // namespace hrf
