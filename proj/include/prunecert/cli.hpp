#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace prunecert::cli {

/// 0 = certified and audited clean; 1 = usage, parse or runtime error;
/// 2 = audit violation.
enum ExitCode : int { kOk = 0, kUsageError = 1, kAuditViolation = 2 };

/// Every knob of a pipeline run. A JSON config file with these keys (names
/// as in the flags, underscores instead of dashes) provides defaults that
/// command-line flags override.
struct RunConfig {
  std::filesystem::path model;
  std::filesystem::path pruned;
  std::filesystem::path calibration;
  std::size_t calibration_samples = 256;
  std::vector<std::size_t> layers;  // empty = all layers
  std::optional<double> sparsity;
  std::optional<double> budget;
  std::vector<double> allocation;  // empty = uniform split of the budget
  bool compensate = false;
  bool refresh_hessian = false;
  bool diagonal = false;
  std::string damping = "auto";
  std::optional<double> radius;
  std::vector<double> box_lower;
  std::vector<double> box_upper;
  std::filesystem::path states;  // validation set
  std::size_t samples = 10'000;
  std::uint64_t seed = 0;
  std::string sampler = "interior";
  std::filesystem::path output_dir;

  std::string dynamics;
  std::filesystem::path dynamics_file;
  std::optional<double> dt;
  std::vector<double> x0;
  std::size_t steps = 500;

  std::vector<std::filesystem::path> inputs;
};

/// Fills `config` from a JSON object; unknown keys are rejected.
void apply_config_json(RunConfig& config, const nlohmann::json& j);

int cmd_prune(const RunConfig& config, std::ostream& out);
int cmd_certify(const RunConfig& config, std::ostream& out);
int cmd_verify(const RunConfig& config, std::ostream& out);
int cmd_simulate(const RunConfig& config, std::ostream& out);
int cmd_report(const RunConfig& config, std::ostream& out);

/// Full command-line entry point (argv[0] is the program name). Errors are
/// reported on `err` and mapped to exit codes; nothing throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace prunecert::cli
