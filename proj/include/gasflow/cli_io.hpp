#pragma once

#include "gasflow/timeloop.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace gasflow {

/// Everything a run needs: the simulation settings plus where the initial data comes from.
struct RunConfig {
  SimConfig sim;
  std::string initial = "symmetric-collision";  ///< builtin name[:N] or a .csv/.json path
  int n_particles = 0;                           ///< builtin size; 0 keeps the builtin default
  std::string entropy_mode = "full";             ///< full | isentropic (S = 0)
  bool zero_momentum = true;                     ///< shift to the zero-momentum frame on ingest
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line) : std::runtime_error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Parses `key = value` lines; '#' and ';' start comments, [section] headers are ignored.
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
/// Flat key/value view of a config, as stored in run manifests.
nlohmann::ordered_json config_to_json(const RunConfig& cfg);

struct IngestOptions {
  int n_particles = 0;
  std::uint64_t seed = 0;
  bool zero_momentum = true;
  bool isentropic = false;
};

/// Builtins: paper-cluster, symmetric-collision, uniform-block, riemann-1d, random-2d (optionally `name:N`).
FluidState builtin_state(const std::string& name, int n_particles = 0, std::uint64_t seed = 0);
std::vector<std::string> builtin_names();

/// Reads a builtin or a CSV/JSON file, renormalizes masses and removes the mean velocity (each with a warning).
FluidState ingest_initial(const std::string& source, const IngestOptions& options,
                          std::vector<std::string>* warnings = nullptr);

FluidState read_state_csv(std::istream& in);
FluidState read_state_json(const nlohmann::json& doc);
void write_state_csv(std::ostream& out, const FluidState& state);

nlohmann::ordered_json state_to_json(const FluidState& state);
nlohmann::ordered_json report_to_json(const StepReport& report);
StepReport report_from_json(const nlohmann::json& j);
nlohmann::ordered_json frame_to_json(const Frame& frame);
Frame frame_from_json(const nlohmann::json& j);

/// One compact JSON object per line.
std::string frame_line(const Frame& frame);
std::vector<Frame> read_frames(const std::filesystem::path& path);

struct Violation {
  std::string invariant;
  int frame = -1;
  std::string detail;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

/// Runs the invariant suite over a dump directory (frames.jsonl + manifest.json).
ValidationResult validate_dump(const std::filesystem::path& dir);

/// CSV tables: energy vs t, acceleration/stress/dissipation vs t, W2 increments (1D only).
void write_energy_csv(std::ostream& out, const std::vector<Frame>& frames);
void write_accel_csv(std::ostream& out, const std::vector<Frame>& frames);
void write_w2_csv(std::ostream& out, const std::vector<Frame>& frames, double initial_energy);

/// W2 distances between successive tau-halvings of a 1D run, sampled at the coarse step times.
void write_refinement_csv(std::ostream& out, const RunConfig& cfg, const FluidState& initial, int levels);

int run_cli(int argc, char** argv);

}  // namespace gasflow
