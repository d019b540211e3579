#pragma once

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fetwfe::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Stable process exit codes.
enum ExitCode : int { kSuccess = 0, kInternalError = 1, kInputError = 2 };

struct ValidateArgs {
  std::string csv;
  bool drop_always_treated = false;
  std::optional<std::string> json_out;  // machine-readable report path
};

struct EstimateArgs {
  std::string csv;
  double q = 0.5;
  int grid_size = 100;
  double lambda_min_ratio = 1e-4;
  std::optional<double> sigma_sq;
  std::optional<double> sigma_c_sq;
  double alpha = 0.05;
  double ridge_lambda2 = 0.0;
  bool drop_always_treated = false;
  std::optional<std::string> split_counts;  // CSV: cohort,count
  std::optional<std::string> weights;       // CSV: cohort,time,weight
  std::optional<std::string> out;           // output directory
};

struct SimulateArgs {
  std::optional<std::string> config;  // JSON SimConfig
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> replications;
  bool competitors_raw = false;
  std::optional<std::string> out;
};

/// Files written by a command, with everything needed to reproduce it.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

int cmd_validate(const ValidateArgs& args, std::ostream& out, std::ostream& err);
int cmd_estimate(const EstimateArgs& args, std::ostream& out, std::ostream& err);
int cmd_simulate(const SimulateArgs& args, std::ostream& out, std::ostream& err);

/// Parses the command line and dispatches to a subcommand.
int run(int argc, char** argv);

}  // namespace fetwfe::cli
