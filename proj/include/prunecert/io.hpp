#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "prunecert/certifier.hpp"
#include "prunecert/controlsim.hpp"
#include "prunecert/policy.hpp"
#include "prunecert/pruner.hpp"

namespace prunecert {

inline constexpr const char* kToolVersion = "0.1.0";

/// Malformed input file. The message names the file and the offending line
/// or JSON field path.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model schema:
///   {"layers":[{"weights":[[...]], "bias":[...],
///               "activation":{"kind":"relu", "alpha":0.1}}]}
/// with weights row-major, outer index = output neuron.
MlpPolicy policy_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const MlpPolicy& policy);

MlpPolicy load_policy(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& path);
/// Two-space indented with a trailing newline. Doubles use the shortest
/// representation that parses back to the same bits.
std::string dump_json(const nlohmann::json& j);

/// Headerless CSV, one state per row. `dim` = 0 accepts any consistent width.
std::vector<Vector> parse_states_csv(std::istream& in, std::size_t dim,
                                     const std::string& source = "<stream>");
std::vector<Vector> load_states_csv(const std::filesystem::path& path, std::size_t dim = 0);
void write_states_csv(std::ostream& out, const std::vector<Vector>& states);

struct PlanMetadata {
  std::uint64_t seed = 0;
  std::string damping = "auto";
  std::string selection;  // "sparsity" or "budget"
  double target = 0.0;    // sparsity fraction or epsilon
};

nlohmann::json plan_to_json(const PrunePlan& plan, const PlanMetadata& meta);
PrunePlan plan_from_json(const nlohmann::json& j);

/// Certificate schema:
///   {"layers":[{"k":int,"c_max":float,"delta_spectral":float,"contribution":float}],
///    "budget":float, "radius":float, "mode":"radius"|"validation",
///    "audit":{"samples":int,"max_dev":float,"violations":int,"seed":int,...},
///    "holds":bool}
nlohmann::json certificate_to_json(const Certificate& cert);
Certificate certificate_from_json(const nlohmann::json& j);

/// Columns: t, trajectory, x_0.., u_0.. (original policy), uhat_0.. (pruned
/// policy), deviation, bound, in_ball, divergence. A blown-up rollout ends
/// with an "ERROR" sentinel row.
void write_deviation_csv(std::ostream& out, const DeviationReport& report, std::size_t state_dim,
                         std::size_t action_dim);
nlohmann::json deviation_summary_json(const DeviationReport& report);

}  // namespace prunecert
