#include "gasflow/cli_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace gasflow {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(what + ": '" + text + "' is not a number");
  }
  if (used != text.size()) throw std::invalid_argument(what + ": '" + text + "' is not a number");
  return v;
}

long long to_int(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(what + ": '" + text + "' is not an integer");
  }
  if (used != text.size()) throw std::invalid_argument(what + ": '" + text + "' is not an integer");
  return v;
}

bool to_bool(const std::string& text, const std::string& what) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw std::invalid_argument(what + ": '" + text + "' is not a boolean");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  cfg.sim.law.kappa = 1.0;
  std::set<std::string> seen;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') continue;
    const auto eq = line.find('=');
    const auto where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'", line_no);
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'", line_no);
    try {
      SimConfig& s = cfg.sim;
      if (key == "tau") s.tau = to_double(value, key);
      else if (key == "t_end") s.t_end = to_double(value, key);
      else if (key == "mode") s.law.mode = gas_mode_from_string(value);
      else if (key == "gamma") s.law.gamma = to_double(value, key);
      else if (key == "kappa") s.law.kappa = to_double(value, key);
      else if (key == "merge_tol") s.merge_tol = to_double(value, key);
      else if (key == "tol_feas") s.solver.projection.tol_feas = to_double(value, key);
      else if (key == "tol_opt") s.solver.projection.tol_opt = to_double(value, key);
      else if (key == "max_sweeps") s.solver.projection.max_sweeps = static_cast<int>(to_int(value, key));
      else if (key == "shuffle_sweeps") s.solver.projection.shuffle = to_bool(value, key);
      else if (key == "neighbor_k") s.solver.projection.neighbor_k = static_cast<int>(to_int(value, key));
      else if (key == "solver_max_iters") s.solver.max_iters = static_cast<int>(to_int(value, key));
      else if (key == "solver_tol") s.solver.tol = to_double(value, key);
      else if (key == "quad_pts") s.solver.quad_pts = static_cast<int>(to_int(value, key));
      else if (key == "seed") s.seed = static_cast<std::uint64_t>(to_int(value, key));
      else if (key == "frames_every") s.frames_every = static_cast<int>(to_int(value, key));
      else if (key == "intra_samples") s.intra_samples = static_cast<int>(to_int(value, key));
      else if (key == "initial") cfg.initial = value;
      else if (key == "n_particles") cfg.n_particles = static_cast<int>(to_int(value, key));
      else if (key == "entropy_mode") cfg.entropy_mode = value;
      else if (key == "zero_momentum") cfg.zero_momentum = to_bool(value, key);
      else throw ConfigError(where + ": unknown key '" + key + "'", line_no);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(where + ": " + e.what(), line_no);
    }
  }
  for (const char* required : {"tau", "t_end"})
    if (!seen.count(required)) throw ConfigError(source + ": missing required key '" + required + "'", 0);
  if (cfg.entropy_mode != "full" && cfg.entropy_mode != "isentropic")
    throw ConfigError(source + ": entropy_mode must be full or isentropic", 0);
  if (cfg.n_particles < 0) throw ConfigError(source + ": n_particles must be >= 0", 0);
  try {
    cfg.sim.validate();
  } catch (const std::exception& e) {
    throw ConfigError(source + ": " + e.what(), 0);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string(), 0);
  return parse_config(in, path.string());
}

ojson config_to_json(const RunConfig& cfg) {
  const SimConfig& s = cfg.sim;
  ojson j;
  j["tau"] = s.tau;
  j["t_end"] = s.t_end;
  j["mode"] = to_string(s.law.mode);
  j["gamma"] = s.law.gamma;
  j["kappa"] = s.law.kappa;
  j["merge_tol"] = s.merge_tol;
  j["tol_feas"] = s.solver.projection.tol_feas;
  j["tol_opt"] = s.solver.projection.tol_opt;
  j["max_sweeps"] = s.solver.projection.max_sweeps;
  j["shuffle_sweeps"] = s.solver.projection.shuffle;
  j["neighbor_k"] = s.solver.projection.neighbor_k;
  j["solver_max_iters"] = s.solver.max_iters;
  j["solver_tol"] = s.solver.tol;
  j["quad_pts"] = s.solver.quad_pts;
  j["seed"] = s.seed;
  j["frames_every"] = s.frames_every;
  j["intra_samples"] = s.intra_samples;
  j["initial"] = cfg.initial;
  j["n_particles"] = cfg.n_particles;
  j["entropy_mode"] = cfg.entropy_mode;
  j["zero_momentum"] = cfg.zero_momentum;
  return j;
}

// ---------------------------------------------------------------------------------------------
// Initial data

std::vector<std::string> builtin_names() {
  return {"paper-cluster", "symmetric-collision", "uniform-block", "riemann-1d", "random-2d"};
}

namespace {

FluidState make_state(Index n, Index d) {
  FluidState s;
  s.masses = Vec::Zero(n);
  s.positions = Points::Zero(n, d);
  s.velocities = Points::Zero(n, d);
  s.entropies = Vec::Zero(n);
  return s;
}

}  // namespace

FluidState builtin_state(const std::string& spec, int n_particles, std::uint64_t seed) {
  std::string name = spec;
  int n = n_particles;
  if (const auto colon = spec.find(':'); colon != std::string::npos) {
    name = spec.substr(0, colon);
    n = static_cast<int>(to_int(spec.substr(colon + 1), "builtin size"));
  }
  if (n < 0) throw std::invalid_argument("builtin size must be positive");

  if (name == "symmetric-collision") {
    FluidState s = make_state(2, 1);
    s.masses << 0.5, 0.5;
    s.positions << -1.0, 1.0;
    s.velocities << 1.0, -1.0;
    return s;
  }
  if (name == "paper-cluster") {
    // Half the mass spread uniformly on (-1, 1) at rest, half concentrated at 0 moving right.
    const Index samples = n > 0 ? n : 1000;
    FluidState s = make_state(samples + 1, 1);
    for (Index k = 0; k < samples; ++k) {
      s.masses(k) = 0.5 / static_cast<double>(samples);
      s.positions(k, 0) = -1.0 + (static_cast<double>(k) + 0.25) * 2.0 / static_cast<double>(samples);
    }
    s.masses(samples) = 0.5;
    s.velocities(samples, 0) = 1.0;
    return s;
  }
  if (name == "uniform-block") {
    // Equally spaced nodes on [-1/2, 1/2] with trapezoid masses: unit lumped density at rest.
    const Index nodes = n > 0 ? n : 64;
    if (nodes < 2) throw std::invalid_argument("uniform-block needs at least two particles");
    FluidState s = make_state(nodes, 1);
    const double h = 1.0 / static_cast<double>(nodes - 1);
    for (Index k = 0; k < nodes; ++k) {
      s.positions(k, 0) = -0.5 + static_cast<double>(k) * h;
      s.masses(k) = (k == 0 || k == nodes - 1) ? 0.5 * h : h;
    }
    return s;
  }
  if (name == "riemann-1d") {
    // Dense gas on [-1, 0) next to thin gas on (0, 1], equal particle masses, at rest.
    const Index total = n > 0 ? n : 100;
    if (total < 4) throw std::invalid_argument("riemann-1d needs at least four particles");
    const Index left = (4 * total) / 5;
    const Index right = total - left;
    FluidState s = make_state(total, 1);
    s.masses.setConstant(1.0 / static_cast<double>(total));
    for (Index k = 0; k < left; ++k) s.positions(k, 0) = -1.0 + (static_cast<double>(k) + 0.5) / static_cast<double>(left);
    for (Index k = 0; k < right; ++k)
      s.positions(left + k, 0) = (static_cast<double>(k) + 0.5) / static_cast<double>(right);
    return s;
  }
  if (name == "random-2d") {
    const Index count = n > 0 ? n : 50;
    FluidState s = make_state(count, 2);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(-1.0, 1.0);
    std::normal_distribution<double> vel(0.0, 1.0);
    s.masses.setConstant(1.0 / static_cast<double>(count));
    for (Index i = 0; i < count; ++i) {
      s.positions.row(i) << pos(rng), pos(rng);
      s.velocities.row(i) << vel(rng), vel(rng);
    }
    return s;
  }
  throw std::invalid_argument("unknown builtin '" + name + "'");
}

FluidState read_state_csv(std::istream& in) {
  std::string header;
  while (std::getline(in, header) && trim(header).empty()) {
  }
  if (trim(header).empty()) throw std::invalid_argument("empty input");
  const std::vector<std::string> cols = split(trim(header), ',');
  int m_col = -1, s_col = -1;
  std::map<int, int> x_cols, u_cols;
  for (int c = 0; c < static_cast<int>(cols.size()); ++c) {
    const std::string& name = cols[c];
    if (name == "m") m_col = c;
    else if (name == "S") s_col = c;
    else if (name == "x") x_cols[0] = c;
    else if (name == "u") u_cols[0] = c;
    else if (name.size() > 1 && name[0] == 'x') x_cols[static_cast<int>(to_int(name.substr(1), "column"))] = c;
    else if (name.size() > 1 && name[0] == 'u') u_cols[static_cast<int>(to_int(name.substr(1), "column"))] = c;
    else throw std::invalid_argument("unknown CSV column '" + name + "'");
  }
  if (m_col < 0 || x_cols.empty()) throw std::invalid_argument("CSV needs columns m and x0..");
  if (!u_cols.empty() && u_cols.size() != x_cols.size()) throw std::invalid_argument("dimension mismatch between x and u columns");
  const Index d = static_cast<Index>(x_cols.size());
  for (Index a = 0; a < d; ++a)
    if (!x_cols.count(static_cast<int>(a)) || (!u_cols.empty() && !u_cols.count(static_cast<int>(a))))
      throw std::invalid_argument("dimension mismatch: columns must be numbered 0..d-1");

  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(trim(line), ',');
    if (fields.size() != cols.size())
      throw std::invalid_argument("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(cols.size()) + " fields");
    std::vector<double> row;
    for (const auto& f : fields) row.push_back(to_double(f, "CSV line " + std::to_string(line_no)));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument("empty input");
  FluidState s = make_state(static_cast<Index>(rows.size()), d);
  for (Index i = 0; i < s.size(); ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    s.masses(i) = r[m_col];
    if (s_col >= 0) s.entropies(i) = r[s_col];
    for (Index a = 0; a < d; ++a) {
      s.positions(i, a) = r[x_cols[static_cast<int>(a)]];
      if (!u_cols.empty()) s.velocities(i, a) = r[u_cols[static_cast<int>(a)]];
    }
  }
  return s;
}

void write_state_csv(std::ostream& out, const FluidState& state) {
  out << "m";
  for (Index a = 0; a < state.dim(); ++a) out << ",x" << a;
  for (Index a = 0; a < state.dim(); ++a) out << ",u" << a;
  out << ",S\n";
  for (Index i = 0; i < state.size(); ++i) {
    out << fmt(state.masses(i));
    for (Index a = 0; a < state.dim(); ++a) out << ',' << fmt(state.positions(i, a));
    for (Index a = 0; a < state.dim(); ++a) out << ',' << fmt(state.velocities(i, a));
    out << ',' << fmt(state.entropies(i)) << '\n';
  }
}

FluidState read_state_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("particles") || !doc["particles"].is_array())
    throw std::invalid_argument("JSON state needs a 'particles' array");
  const json& parts = doc["particles"];
  if (parts.empty()) throw std::invalid_argument("empty input");
  const Index n = static_cast<Index>(parts.size());
  const Index d = static_cast<Index>(parts[0].at("x").size());
  if (d < 1) throw std::invalid_argument("particle positions must have at least one component");
  FluidState s = make_state(n, d);
  for (Index i = 0; i < n; ++i) {
    const json& p = parts[static_cast<std::size_t>(i)];
    const json& x = p.at("x");
    if (static_cast<Index>(x.size()) != d) throw std::invalid_argument("dimension mismatch in particle " + std::to_string(i));
    s.masses(i) = p.at("m").get<double>();
    s.entropies(i) = p.contains("S") ? p["S"].get<double>() : 0.0;
    for (Index a = 0; a < d; ++a) s.positions(i, a) = x[static_cast<std::size_t>(a)].get<double>();
    if (p.contains("u")) {
      const json& u = p["u"];
      if (static_cast<Index>(u.size()) != d) throw std::invalid_argument("dimension mismatch in particle " + std::to_string(i));
      for (Index a = 0; a < d; ++a) s.velocities(i, a) = u[static_cast<std::size_t>(a)].get<double>();
    }
  }
  return s;
}

FluidState ingest_initial(const std::string& source, const IngestOptions& options, std::vector<std::string>* warnings) {
  const auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  FluidState s;
  const std::string base = source.substr(0, source.find(':'));
  const auto names = builtin_names();
  if (std::find(names.begin(), names.end(), base) != names.end()) {
    s = builtin_state(source, options.n_particles, options.seed);
  } else {
    const std::filesystem::path path(source);
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open initial data '" + source + "'");
    const std::string ext = path.extension().string();
    if (ext == ".json") {
      std::stringstream buf;
      buf << in.rdbuf();
      if (trim(buf.str()).empty()) throw std::invalid_argument("empty input");
      s = read_state_json(json::parse(buf.str()));
    } else {
      s = read_state_csv(in);
    }
  }

  if (!s.masses.allFinite() || !s.positions.allFinite() || !s.velocities.allFinite() || !s.entropies.allFinite())
    throw std::invalid_argument("initial data contains non-finite values");
  if ((s.masses.array() < 0.0).any()) throw std::invalid_argument("negative mass in initial data");
  if ((s.entropies.array() < 0.0).any()) throw std::invalid_argument("negative entropy in initial data");
  const double total = pairwise_sum(s.masses);
  if (!(total > 0.0)) throw std::invalid_argument("initial data has zero total mass");
  if (std::abs(total - 1.0) > 1e-12) {
    s.masses /= total;
    warn("masses summed to " + fmt(total) + "; renormalized to 1");
  }
  if (options.isentropic) s.entropies.setZero();
  if (options.zero_momentum) {
    const Vec p = total_momentum(s);
    if (p.lpNorm<Eigen::Infinity>() > 0.0) {
      s.velocities.rowwise() -= p.transpose();
      warn("removed a mean velocity of norm " + fmt(p.norm()) + " to reach the zero-momentum frame");
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------------------------
// Frames

ojson state_to_json(const FluidState& state) {
  ojson parts = ojson::array();
  for (Index i = 0; i < state.size(); ++i) {
    ojson p;
    p["m"] = state.masses(i);
    std::vector<double> x(static_cast<std::size_t>(state.dim())), u(static_cast<std::size_t>(state.dim()));
    for (Index a = 0; a < state.dim(); ++a) {
      x[a] = state.positions(i, a);
      u[a] = state.velocities(i, a);
    }
    p["x"] = x;
    p["u"] = u;
    p["S"] = state.entropies(i);
    parts.push_back(std::move(p));
  }
  ojson j;
  j["particles"] = std::move(parts);
  return j;
}

ojson report_to_json(const StepReport& r) {
  ojson j;
  j["acc_cost_sq"] = r.acc_cost_sq;
  j["stress_trace"] = r.stress_trace;
  j["kinetic_before"] = r.kinetic_before;
  j["kinetic_after"] = r.kinetic_after;
  j["internal_before"] = r.internal_before;
  j["internal_after"] = r.internal_after;
  j["dissipation"] = r.dissipation;
  j["momentum_after"] = std::vector<double>(r.momentum_after.data(), r.momentum_after.data() + r.momentum_after.size());
  j["orthogonality_residual"] = r.orthogonality_residual;
  j["el_residual"] = r.el_residual;
  j["cramer_residual"] = r.cramer_residual;
  j["pairwise_violation"] = r.pairwise_violation;
  j["iterations"] = r.iterations;
  return j;
}

StepReport report_from_json(const json& j) {
  StepReport r;
  r.acc_cost_sq = j.at("acc_cost_sq").get<double>();
  r.stress_trace = j.at("stress_trace").get<double>();
  r.kinetic_before = j.at("kinetic_before").get<double>();
  r.kinetic_after = j.at("kinetic_after").get<double>();
  r.internal_before = j.at("internal_before").get<double>();
  r.internal_after = j.at("internal_after").get<double>();
  r.dissipation = j.at("dissipation").get<double>();
  const auto p = j.at("momentum_after").get<std::vector<double>>();
  r.momentum_after = Eigen::Map<const Vec>(p.data(), static_cast<Index>(p.size()));
  r.orthogonality_residual = j.at("orthogonality_residual").get<double>();
  r.el_residual = j.at("el_residual").get<double>();
  r.cramer_residual = j.at("cramer_residual").get<double>();
  r.pairwise_violation = j.at("pairwise_violation").get<double>();
  r.iterations = j.at("iterations").get<int>();
  return r;
}

ojson frame_to_json(const Frame& f) {
  ojson j;
  j["t"] = f.t;
  j["step"] = f.step;
  j["kind"] = to_string(f.kind);
  j["particles"] = state_to_json(f.state)["particles"];
  const double kinetic = f.kinetic();
  j["energies"] = ojson{{"kinetic", kinetic}, {"internal", f.internal}, {"total", kinetic + f.internal}};
  j["report"] = report_to_json(f.report);
  return j;
}

Frame frame_from_json(const json& j) {
  Frame f;
  f.t = j.at("t").get<double>();
  f.step = j.at("step").get<int>();
  f.kind = frame_kind_from_string(j.at("kind").get<std::string>());
  f.state = read_state_json(j);
  f.internal = j.at("energies").at("internal").get<double>();
  f.report = report_from_json(j.at("report"));
  return f;
}

std::string frame_line(const Frame& frame) { return frame_to_json(frame).dump(); }

std::vector<Frame> read_frames(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  std::vector<Frame> frames;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      frames.push_back(frame_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return frames;
}

// ---------------------------------------------------------------------------------------------
// Validation

ValidationResult validate_dump(const std::filesystem::path& dir) {
  ValidationResult res;
  const auto fail = [&](const std::string& inv, int frame, const std::string& detail) {
    res.violations.push_back({inv, frame, detail});
  };

  json manifest;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
      fail("manifest-present", -1, "manifest.json missing");
      return res;
    }
    try {
      manifest = json::parse(in);
    } catch (const std::exception& e) {
      fail("manifest-present", -1, e.what());
      return res;
    }
  }
  std::vector<Frame> frames;
  try {
    frames = read_frames(dir / "frames.jsonl");
  } catch (const std::exception& e) {
    fail("frame-schema", -1, e.what());
    return res;
  }
  if (frames.empty()) {
    fail("frame-schema", -1, "no frames");
    return res;
  }

  const double e0 = frames.front().total();
  const double e_bar = manifest.value("initial_energy", e0);
  const double scale = 1.0 + std::abs(e_bar);
  const Vec p0 = total_momentum(frames.front().state);
  const bool one_d = frames.front().state.dim() == 1;
  const double bound = std::sqrt(2.0 * std::max(0.0, e_bar));
  const double m0 = std::sqrt(second_moment(frames.front().state));
  if (std::abs(e0 - e_bar) > 1e-9 * scale)
    fail("initial-energy", 0, "frame 0 energy " + fmt(e0) + " differs from manifest " + fmt(e_bar));

  double last_total = e0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Frame& f = frames[k];
    const int idx = static_cast<int>(k);
    const double mass = pairwise_sum(f.state.masses);
    if (std::abs(mass - 1.0) > 1e-10) fail("mass-normalization", idx, "total mass " + fmt(mass));
    if ((f.state.masses.array() < 0.0).any()) fail("mass-nonnegative", idx, "negative particle mass");
    if ((f.state.entropies.array() < 0.0).any()) fail("entropy-nonnegative", idx, "negative entropy");
    if (k > 0 && !(f.t > frames[k - 1].t)) fail("time-order", idx, "t does not increase");
    const double drift = (total_momentum(f.state) - p0).lpNorm<Eigen::Infinity>();
    if (drift > 1e-10) fail("momentum-conservation", idx, "momentum drift " + fmt(drift));
    if (!(f.internal >= 0.0) || !std::isfinite(f.internal)) fail("internal-energy-finite", idx, "internal " + fmt(f.internal));
    if (f.kind != FrameKind::intra) {
      if (f.total() > last_total + 1e-8 * scale)
        fail("energy-monotonicity", idx, "total energy rose from " + fmt(last_total) + " to " + fmt(f.total()));
      last_total = f.total();
    }
    if (f.kind == FrameKind::step) {
      const StepReport& r = f.report;
      if (std::abs(r.kinetic_after - f.kinetic()) > 1e-9 * (1.0 + f.kinetic()))
        fail("energy-consistency", idx, "reported kinetic_after " + fmt(r.kinetic_after) + " vs particles " + fmt(f.kinetic()));
      if (r.balance_defect() > 1e-8 * (1.0 + r.energy_before()))
        fail("energy-balance", idx, "per-step balance defect " + fmt(r.balance_defect()));
      if (r.stress_trace < -1e-8 * (1.0 + r.kinetic_before))
        fail("stress-nonnegativity", idx, "stress trace " + fmt(r.stress_trace));
      if (r.acc_cost_sq < 0.0 || r.dissipation < -1e-12 * scale)
        fail("cost-nonnegativity", idx, "negative acceleration cost or dissipation");
    }
    if (one_d) {
      const double excess = std::sqrt(second_moment(f.state)) - m0 - f.t * bound;
      if (excess > 1e-8) fail("second-moment-bound", idx, "excess " + fmt(excess));
      for (std::size_t b = 0; b < k; ++b) {
        const double dt = f.t - frames[b].t;
        if (dt <= 0.0) continue;
        const double w = wasserstein2_1d(frames[b].state, f.state);
        if (w > bound * dt + 1e-8) {
          fail("lipschitz-bound", idx, "W2 to frame " + std::to_string(b) + " is " + fmt(w) + " > " + fmt(bound * dt));
          break;
        }
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------------------------
// Reports

void write_energy_csv(std::ostream& out, const std::vector<Frame>& frames) {
  out << "t,step,kind,kinetic,internal,total\n";
  for (const Frame& f : frames)
    out << fmt(f.t) << ',' << f.step << ',' << to_string(f.kind) << ',' << fmt(f.kinetic()) << ',' << fmt(f.internal)
        << ',' << fmt(f.total()) << '\n';
}

void write_accel_csv(std::ostream& out, const std::vector<Frame>& frames) {
  out << "t,step,acc_cost_sq,stress_trace,dissipation,balance_defect\n";
  for (const Frame& f : frames) {
    if (f.kind != FrameKind::step) continue;
    const StepReport& r = f.report;
    out << fmt(f.t) << ',' << f.step << ',' << fmt(r.acc_cost_sq) << ',' << fmt(r.stress_trace) << ','
        << fmt(r.dissipation) << ',' << fmt(r.balance_defect()) << '\n';
  }
}

void write_w2_csv(std::ostream& out, const std::vector<Frame>& frames, double initial_energy) {
  out << "t0,t1,w2,bound\n";
  const double bound = std::sqrt(2.0 * std::max(0.0, initial_energy));
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const double w = wasserstein2_1d(frames[k - 1].state, frames[k].state);
    out << fmt(frames[k - 1].t) << ',' << fmt(frames[k].t) << ',' << fmt(w) << ','
        << fmt(bound * (frames[k].t - frames[k - 1].t)) << '\n';
  }
}

void write_refinement_csv(std::ostream& out, const RunConfig& cfg, const FluidState& initial, int levels) {
  if (initial.dim() != 1) throw std::invalid_argument("refinement report supports d = 1 only");
  if (levels < 1) throw std::invalid_argument("refinement needs at least one level");
  std::vector<Trajectory> runs;
  for (int l = 0; l <= levels; ++l) {
    SimConfig sim = cfg.sim;
    sim.tau = cfg.sim.tau / std::pow(2.0, l);
    sim.frames_every = 1;
    sim.intra_samples = 0;
    runs.push_back(simulate(initial, sim));
  }
  out << "level,tau,t,w2_to_next\n";
  const int coarse_steps = static_cast<int>(runs[0].frames.size()) - 1;
  for (int l = 0; l < levels; ++l) {
    const double tau = cfg.sim.tau / std::pow(2.0, l);
    const int ratio_here = 1 << l, ratio_next = 1 << (l + 1);
    for (int k = 1; k <= coarse_steps; ++k) {
      const Frame& a = runs[l].frames[static_cast<std::size_t>(k * ratio_here)];
      const Frame& b = runs[l + 1].frames[static_cast<std::size_t>(k * ratio_next)];
      out << l << ',' << fmt(tau) << ',' << fmt(a.t) << ',' << fmt(wasserstein2_1d(a.state, b.state)) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------------------------
// Command line

namespace {

int emit_error(const std::string& type, const std::string& message, int step = -1) {
  ojson err{{"type", type}, {"message", message}};
  if (step >= 0) err["step"] = step;
  std::cerr << ojson{{"error", err}}.dump() << std::endl;
  return 2;
}

void emit_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << ojson{{"warning", w}}.dump() << std::endl;
}

int thread_cap() {
  const char* env = std::getenv("GASFLOW_THREADS");
  if (!env || !*env) return 1;
  const long long v = to_int(env, "GASFLOW_THREADS");
  if (v < 1) throw std::invalid_argument("GASFLOW_THREADS must be a positive integer");
  return static_cast<int>(v);
}

struct Overrides {
  std::string config;
  std::string initial;
  std::string mode;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int frames_every = 0;
};

RunConfig resolve_config(const Overrides& o) {
  RunConfig cfg = load_config(o.config);
  if (!o.initial.empty()) cfg.initial = o.initial;
  if (!o.mode.empty()) cfg.sim.law.mode = gas_mode_from_string(o.mode);
  if (o.seed_set) cfg.sim.seed = o.seed;
  if (o.frames_every > 0) cfg.sim.frames_every = o.frames_every;
  cfg.sim.validate();
  return cfg;
}

FluidState initial_for(const RunConfig& cfg) {
  std::vector<std::string> warnings;
  IngestOptions opts{cfg.n_particles, cfg.sim.seed, cfg.zero_momentum, cfg.entropy_mode == "isentropic"};
  FluidState s = ingest_initial(cfg.initial, opts, &warnings);
  emit_warnings(warnings);
  return s;
}

void write_json_file(const std::filesystem::path& path, const ojson& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_simulate(const Overrides& o, const std::string& out_dir) {
  const int threads = thread_cap();
  const RunConfig cfg = resolve_config(o);
  const FluidState initial = initial_for(cfg);
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  std::ofstream frames_out(dir / "frames.jsonl");
  if (!frames_out) throw std::runtime_error("cannot write " + (dir / "frames.jsonl").string());

  ojson manifest;
  manifest["format"] = "gasflow-frames";
  manifest["format_version"] = 1;
  manifest["config"] = config_to_json(cfg);
  manifest["seed"] = cfg.sim.seed;
  manifest["initial"] = cfg.initial;
  manifest["n_particles"] = initial.size();
  manifest["dim"] = initial.dim();
  manifest["threads"] = threads;

  std::size_t frames_written = 0;
  int code = 0;
  Trajectory traj;
  try {
    traj = simulate(initial, cfg.sim, [&](const Frame& f) {
      frames_out << frame_line(f) << '\n';
      ++frames_written;
    });
    manifest["status"] = "ok";
  } catch (const SimulationError& e) {
    manifest["status"] = "failed";
    manifest["error"] = ojson{{"message", e.what()}, {"step", e.step()}};
    code = emit_error("simulation", e.what(), e.step());
  }
  frames_out.flush();
  const double e0 = kinetic_energy(initial) +
                    (cfg.sim.law.mode == GasMode::polytropic
                         ? mesh_internal_energy(build_cell_complex(initial), initial.positions, cfg.sim.law)
                         : 0.0);
  manifest["initial_energy"] = e0;
  manifest["steps"] = cfg.sim.step_count();
  manifest["steps_completed"] = traj.reports.size();
  manifest["frames_written"] = frames_written;
  write_json_file(dir / "manifest.json", manifest);

  ojson lineage = ojson::array();
  for (const auto& step : traj.lineage) lineage.push_back(step);
  write_json_file(dir / "lineage.json", ojson{{"cluster_of", lineage}});
  if (code == 0) std::cout << ojson{{"status", "ok"}, {"frames", frames_written}, {"out", dir.string()}}.dump() << std::endl;
  return code;
}

int cmd_step(const Overrides& o) {
  const RunConfig cfg = resolve_config(o);
  const FluidState initial = initial_for(cfg);
  StepOutcome out;
  if (cfg.sim.law.mode == GasMode::pressureless) {
    out = pressureless_step(initial, PressurelessStep{cfg.sim.tau, cfg.sim.merge_tol, cfg.sim.solver.projection});
  } else {
    const CellComplex cx = build_cell_complex(initial);
    out = polytropic_step(initial, cx, PolytropicStep{cfg.sim.tau, cfg.sim.law, cfg.sim.solver});
  }
  ojson j = report_to_json(out.report);
  j["balance_defect"] = out.report.balance_defect();
  j["particles_after"] = out.state.size();
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int cmd_project(const std::string& input, const std::string& output, double tol_feas, int max_sweeps) {
  std::ifstream in(input);
  if (!in) throw std::invalid_argument("cannot open " + input);
  // Same CSV layout as particle files with the u columns renamed y.
  std::stringstream buf;
  std::string header;
  std::getline(in, header);
  const auto cols = split(trim(header), ',');
  std::string renamed;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    std::string name = cols[c];
    if (!name.empty() && name[0] == 'y') name[0] = 'u';
    renamed += (c ? "," : "") + name;
  }
  buf << renamed << '\n' << in.rdbuf();
  const FluidState s = read_state_csv(buf);

  ProjectionProblem problem{s.positions, s.masses, s.velocities, {}};
  problem.settings.tol_feas = tol_feas;
  problem.settings.max_sweeps = max_sweeps;
  const ProjectionResult res = project(problem);

  if (!output.empty()) {
    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot write " + output);
    out << "m";
    for (Index a = 0; a < s.dim(); ++a) out << ",x" << a;
    for (Index a = 0; a < s.dim(); ++a) out << ",T" << a;
    out << '\n';
    for (Index i = 0; i < s.size(); ++i) {
      out << fmt(s.masses(i));
      for (Index a = 0; a < s.dim(); ++a) out << ',' << fmt(s.positions(i, a));
      for (Index a = 0; a < s.dim(); ++a) out << ',' << fmt(res.projected(i, a));
      out << '\n';
    }
  }
  const double residual = std::sqrt(weighted_norm_sq(s.masses, res.projected - s.velocities));
  std::cout << ojson{{"n", s.size()},
                     {"dim", s.dim()},
                     {"sweeps_used", res.sweeps_used},
                     {"max_violation", res.max_violation},
                     {"dual_trace", res.dual_trace},
                     {"residual", residual}}
                   .dump()
            << std::endl;
  return 0;
}

int cmd_validate(const std::string& dir) {
  const ValidationResult res = validate_dump(dir);
  ojson v = ojson::array();
  for (const auto& viol : res.violations)
    v.push_back(ojson{{"invariant", viol.invariant}, {"frame", viol.frame}, {"detail", viol.detail}});
  std::cout << ojson{{"ok", res.ok()}, {"violations", v}}.dump() << std::endl;
  return res.ok() ? 0 : 1;
}

int cmd_report(const std::string& dump, const std::string& out_dir, const Overrides& o, int refine) {
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  if (!dump.empty()) {
    const auto frames = read_frames(std::filesystem::path(dump) / "frames.jsonl");
    if (frames.empty()) throw std::invalid_argument("dump has no frames");
    std::ifstream min(std::filesystem::path(dump) / "manifest.json");
    const double e_bar = min ? json::parse(min).value("initial_energy", frames.front().total()) : frames.front().total();
    std::ofstream energy(dir / "energy.csv"), accel(dir / "accel.csv");
    write_energy_csv(energy, frames);
    write_accel_csv(accel, frames);
    if (frames.front().state.dim() == 1) {
      std::ofstream w2(dir / "w2.csv");
      write_w2_csv(w2, frames, e_bar);
    }
  }
  if (refine > 0) {
    if (o.config.empty()) throw std::invalid_argument("--refine needs --config");
    const RunConfig cfg = resolve_config(o);
    const FluidState initial = initial_for(cfg);
    std::ofstream ref(dir / "refine.csv");
    write_refinement_csv(ref, cfg, initial, refine);
  }
  if (dump.empty() && refine <= 0) throw std::invalid_argument("report needs --dump and/or --refine");
  std::cout << ojson{{"status", "ok"}, {"out", dir.string()}}.dump() << std::endl;
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Lagrangian particle solver for sticky and polytropic gas dynamics"};
  app.require_subcommand(1);

  Overrides o;
  std::string out_dir, input, output, dump;
  double tol_feas = -1.0;
  int max_sweeps = 200000, refine = 0;

  const auto add_overrides = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "run configuration (key = value)");
    if (config_required) c->required();
    sub->add_option("--initial", o.initial, "builtin name[:N] or particle file, overrides the config");
    sub->add_option("--mode-override", o.mode, "pressureless | polytropic");
    sub->add_option("--seed", o.seed, "seed for sampling builtins and sweep shuffles")->each([&](const std::string&) {
      o.seed_set = true;
    });
    sub->add_option("--frames-every", o.frames_every, "keep every k-th step frame");
  };

  auto* sim = app.add_subcommand("simulate", "run the time loop and write frames.jsonl + manifest.json");
  add_overrides(sim, true);
  sim->add_option("--out", out_dir, "output directory")->required();

  auto* step = app.add_subcommand("step", "perform one step and print the step report");
  add_overrides(step, true);

  auto* proj = app.add_subcommand("project", "project targets onto the monotone cone");
  proj->add_option("--input", input, "CSV with columns m, x0.., y0..")->required();
  proj->add_option("--out", output, "CSV with columns m, x0.., T0..");
  proj->add_option("--tol-feas", tol_feas, "feasibility tolerance (negative: automatic)");
  proj->add_option("--max-sweeps", max_sweeps, "sweep limit");

  auto* val = app.add_subcommand("validate", "check the invariant suite on a dump");
  val->add_option("dump", dump, "dump directory")->required();

  auto* rep = app.add_subcommand("report", "write CSV tables");
  rep->add_option("--dump", dump, "dump directory");
  rep->add_option("--out", out_dir, "output directory")->required();
  rep->add_option("--refine", refine, "tau-halving levels for a W2 refinement table");
  add_overrides(rep, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return emit_error("usage", e.what());
  }

  try {
    if (*sim) return cmd_simulate(o, out_dir);
    if (*step) return cmd_step(o);
    if (*proj) return cmd_project(input, output, tol_feas, max_sweeps);
    if (*val) return cmd_validate(dump);
    if (*rep) return cmd_report(dump, out_dir, o, refine);
  } catch (const ConfigError& e) {
    return emit_error("config", e.what(), -1);
  } catch (const SimulationError& e) {
    return emit_error("simulation", e.what(), e.step());
  } catch (const ProjectionError& e) {
    return emit_error("projection", e.what());
  } catch (const std::exception& e) {
    return emit_error("runtime", e.what());
  }
  return 2;
}

}  // namespace gasflow
