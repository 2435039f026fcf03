#include "gasflow/cli_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace gasflow;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "gasflow");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(GASFLOW_TEST_TMP) / "cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg");
}

}  // namespace

TEST_CASE("config parsing") {
  const RunConfig cfg = parse(
      "# a run\n[time]\ntau = 0.05\nt_end = 1 ; comment\nmode = polytropic\ngamma = 2\n"
      "initial = riemann-1d:40\nshuffle_sweeps = yes\nintra_samples = 2\n");
  CHECK(cfg.sim.tau == 0.05);
  CHECK(cfg.sim.t_end == 1.0);
  CHECK(cfg.sim.law.mode == GasMode::polytropic);
  CHECK(cfg.sim.law.gamma == 2.0);
  CHECK(cfg.sim.law.kappa == 1.0);
  CHECK(cfg.sim.solver.projection.shuffle);
  CHECK(cfg.sim.intra_samples == 2);
  CHECK(cfg.initial == "riemann-1d:40");

  const auto j = config_to_json(cfg);
  CHECK(j.at("tau").get<double>() == 0.05);
  CHECK(j.at("mode").get<std::string>() == "polytropic");
}

TEST_CASE("config errors name the line") {
  const auto line_of = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ConfigError& e) {
      return e.line();
    }
    return -1;
  };
  CHECK(line_of("tau = 0.1\nt_end = 1\nspeed = 3\n") == 3);
  CHECK(line_of("tau = 0.1\ntau = 0.2\nt_end = 1\n") == 2);
  CHECK(line_of("tau =\nt_end = 1\n") == 1);
  CHECK(line_of("tau = 0.1\nt_end = 1\ngamma = fast\n") == 3);
  CHECK(line_of("tau 0.1\n") == 1);
  CHECK(line_of("tau = 0.1\n") == 0);
  CHECK(line_of("tau = 0.1\nt_end = 1\nentropy_mode = warm\n") == 0);
  CHECK_THROWS_WITH_AS(parse("tau = 0.1\nt_end = 1\nspeed = 3\n"), doctest::Contains("speed"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), ConfigError);
}

TEST_CASE("builtins") {
  for (const auto& name : builtin_names()) {
    const FluidState s = builtin_state(name);
    CHECK_NOTHROW(s.validate());
  }
  const FluidState cluster = builtin_state("paper-cluster", 10);
  CHECK(cluster.size() == 11);
  CHECK(cluster.masses(10) == 0.5);
  CHECK(cluster.velocities(10, 0) == 1.0);
  CHECK(cluster.positions(10, 0) == 0.0);
  CHECK(cluster.masses.head(10).sum() == doctest::Approx(0.5));
  CHECK(builtin_state("uniform-block:5").size() == 5);
  CHECK(builtin_state("random-2d:7", 0, 3).positions == builtin_state("random-2d", 7, 3).positions);
  CHECK_THROWS_AS(builtin_state("uniform-block:1"), std::invalid_argument);
}

TEST_CASE("ingest warnings and errors") {
  const fs::path dir = scratch("ingest");
  std::vector<std::string> warnings;
  IngestOptions opts;
  const FluidState cluster = ingest_initial("paper-cluster:20", opts, &warnings);
  CHECK(total_momentum(cluster).norm() <= 1e-15);
  CHECK(warnings.size() == 1);

  write_file(dir / "heavy.csv", "m,x,u,S\n1,0,0,0\n1,1,0,0\n");
  warnings.clear();
  const FluidState heavy = ingest_initial((dir / "heavy.csv").string(), opts, &warnings);
  CHECK(heavy.masses(0) == 0.5);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("renormalized") != std::string::npos);

  write_file(dir / "empty.json", "");
  CHECK_THROWS_WITH_AS(ingest_initial((dir / "empty.json").string(), opts), "empty input", std::invalid_argument);
  write_file(dir / "empty.csv", "m,x,u,S\n");
  CHECK_THROWS_AS(ingest_initial((dir / "empty.csv").string(), opts), std::invalid_argument);
  write_file(dir / "neg.csv", "m,x,u,S\n-0.5,0,0,0\n1.5,1,0,0\n");
  CHECK_THROWS_WITH_AS(ingest_initial((dir / "neg.csv").string(), opts), doctest::Contains("negative mass"),
                       std::invalid_argument);
  write_file(dir / "dims.json", R"({"particles":[{"m":0.5,"x":[0,0],"u":[0,0],"S":0},{"m":0.5,"x":[1],"u":[0],"S":0}]})");
  CHECK_THROWS_WITH_AS(ingest_initial((dir / "dims.json").string(), opts), doctest::Contains("dimension mismatch"),
                       std::invalid_argument);
  CHECK_THROWS_AS(ingest_initial((dir / "missing.csv").string(), opts), std::invalid_argument);

  opts.isentropic = true;
  write_file(dir / "hot.csv", "m,x0,x1,u0,u1,S\n0.5,0,0,1,0,2\n0.5,1,0,-1,0,3\n");
  const FluidState hot = ingest_initial((dir / "hot.csv").string(), opts);
  CHECK(hot.dim() == 2);
  CHECK(hot.entropies.isZero());
}

TEST_CASE("state and frame serialization round-trips bit-exactly") {
  FluidState s = builtin_state("random-2d", 9, 17);
  s.velocities(3, 1) = 1.0 / 3.0;
  s.entropies(2) = 0.1;
  std::ostringstream csv;
  write_state_csv(csv, s);
  std::istringstream back(csv.str());
  const FluidState t = read_state_csv(back);
  CHECK(t.masses == s.masses);
  CHECK(t.positions == s.positions);
  CHECK(t.velocities == s.velocities);
  CHECK(t.entropies == s.entropies);

  const FluidState j = read_state_json(nlohmann::json::parse(state_to_json(s).dump()));
  CHECK(j.positions == s.positions);
  CHECK(j.velocities == s.velocities);

  Frame f;
  f.t = 0.30000000000000004;
  f.step = 3;
  f.kind = FrameKind::intra;
  f.state = s;
  f.internal = 0.123456789012345678;
  f.report.acc_cost_sq = 2.0 / 7.0;
  f.report.momentum_after = Vec::Constant(2, -1e-17);
  f.report.iterations = 12;
  const Frame g = frame_from_json(nlohmann::json::parse(frame_line(f)));
  CHECK(g.t == f.t);
  CHECK(g.kind == f.kind);
  CHECK(g.step == 3);
  CHECK(g.internal == f.internal);
  CHECK(g.report.acc_cost_sq == f.report.acc_cost_sq);
  CHECK(g.report.momentum_after == f.report.momentum_after);
  CHECK(g.report.iterations == 12);
  CHECK(g.state.positions == s.positions);
}

TEST_CASE("csv readers reject malformed headers") {
  std::istringstream bad("m,x0,x1,u0,S\n1,0,0,0,0\n");
  CHECK_THROWS_AS(read_state_csv(bad), std::invalid_argument);
  std::istringstream one("m,x,u,S\n1,0.5,2,0\n");
  const FluidState s = read_state_csv(one);
  CHECK(s.dim() == 1);
  CHECK(s.velocities(0, 0) == 2.0);
}

TEST_CASE("simulate, validate and report through the command line") {
  const fs::path dir = scratch("run");
  write_file(dir / "run.cfg", "tau = 0.05\nt_end = 0.5\nmode = polytropic\ngamma = 1.4\nkappa = 0.5\ninitial = riemann-1d:20\n"
                              "intra_samples = 1\n");
  const CliResult sim = run({"simulate", "--config", (dir / "run.cfg").string(), "--out", (dir / "dump").string()});
  REQUIRE(sim.code == 0);
  CHECK(fs::exists(dir / "dump" / "frames.jsonl"));
  CHECK(fs::exists(dir / "dump" / "lineage.json"));
  std::ifstream mf(dir / "dump" / "manifest.json");
  const auto manifest = nlohmann::json::parse(mf);
  CHECK(manifest.at("format").get<std::string>() == "gasflow-frames");
  CHECK(manifest.at("status").get<std::string>() == "ok");
  CHECK(manifest.at("steps_completed").get<int>() == 10);
  CHECK(manifest.at("frames_written").get<int>() == 21);

  const CliResult ok = run({"validate", (dir / "dump").string()});
  CHECK(ok.code == 0);
  CHECK(nlohmann::json::parse(ok.out).at("ok").get<bool>());

  const CliResult rep = run({"report", "--dump", (dir / "dump").string(), "--out", (dir / "rep").string()});
  CHECK(rep.code == 0);
  for (const char* name : {"energy.csv", "accel.csv", "w2.csv"}) CHECK(fs::exists(dir / "rep" / name));
  std::ifstream energy(dir / "rep" / "energy.csv");
  std::string header;
  std::getline(energy, header);
  CHECK(header == "t,step,kind,kinetic,internal,total");

  const CliResult refine =
      run({"report", "--config", (dir / "run.cfg").string(), "--refine", "2", "--out", (dir / "ref").string()});
  CHECK(refine.code == 0);
  std::ifstream ref(dir / "ref" / "refine.csv");
  int lines = 0;
  for (std::string l; std::getline(ref, l);) ++lines;
  CHECK(lines == 1 + 2 * 10);

  // Tamper with one particle's velocity: momentum is no longer conserved.
  std::ifstream in(dir / "dump" / "frames.jsonl");
  std::vector<std::string> rows;
  for (std::string l; std::getline(in, l);) rows.push_back(l);
  auto frame = nlohmann::ordered_json::parse(rows[4]);
  frame["particles"][0]["u"][0] = frame["particles"][0]["u"][0].get<double>() + 1.0;
  rows[4] = frame.dump();
  std::ofstream out(dir / "dump" / "frames.jsonl");
  for (const auto& r : rows) out << r << '\n';
  out.close();
  const CliResult bad = run({"validate", (dir / "dump").string()});
  CHECK(bad.code == 1);
  const auto verdict = nlohmann::json::parse(bad.out);
  CHECK_FALSE(verdict.at("ok").get<bool>());
  bool named = false;
  for (const auto& v : verdict.at("violations"))
    if (v.at("invariant") == "momentum-conservation" && v.at("frame") == 4) named = true;
  CHECK(named);
}

TEST_CASE("step and project subcommands") {
  const fs::path dir = scratch("step");
  write_file(dir / "run.cfg", "tau = 0.5\nt_end = 1\ninitial = symmetric-collision\n");
  const CliResult st = run({"step", "--config", (dir / "run.cfg").string()});
  REQUIRE(st.code == 0);
  const auto report = nlohmann::json::parse(st.out);
  CHECK(std::abs(report.at("balance_defect").get<double>()) <= 1e-14);
  CHECK(report.at("particles_after").get<int>() == 2);

  write_file(dir / "mono.csv", "m,x,y\n0.25,0,-1\n0.25,1,0\n0.5,2,3\n");
  const CliResult mono = run({"project", "--input", (dir / "mono.csv").string(), "--out", (dir / "T.csv").string()});
  REQUIRE(mono.code == 0);
  const auto pj = nlohmann::json::parse(mono.out);
  CHECK(pj.at("residual").get<double>() == 0.0);
  CHECK(pj.at("max_violation").get<double>() == 0.0);
  std::ifstream t(dir / "T.csv");
  std::string header, first;
  std::getline(t, header);
  std::getline(t, first);
  CHECK(header == "m,x0,T0");
  CHECK(first == "0.25,0,-1");

  write_file(dir / "cross.csv", "m,x0,x1,y0,y1\n0.5,0,0,1,0\n0.5,1,0,0,0\n");
  const CliResult cross = run({"project", "--input", (dir / "cross.csv").string()});
  REQUIRE(cross.code == 0);
  CHECK(nlohmann::json::parse(cross.out).at("residual").get<double>() == doctest::Approx(0.5));
}

TEST_CASE("usage and runtime errors are reported as JSON") {
  const CliResult none = run({});
  CHECK(none.code == 2);
  CHECK(nlohmann::json::parse(none.err).at("error").at("type") == "usage");
  const CliResult missing = run({"simulate", "--out", "x"});
  CHECK(missing.code == 2);

  const fs::path dir = scratch("errors");
  write_file(dir / "bad.cfg", "tau = 0.1\nt_end = 1\nspeed = 2\n");
  const CliResult cfg = run({"simulate", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()});
  CHECK(cfg.code == 2);
  const auto err = nlohmann::json::parse(cfg.err).at("error");
  CHECK(err.at("type") == "config");
  CHECK(err.at("message").get<std::string>().find(":3:") != std::string::npos);

  const CliResult no_dump = run({"validate", (dir / "nowhere").string()});
  CHECK(no_dump.code == 1);
  CHECK(no_dump.out.find("manifest-present") != std::string::npos);
}
