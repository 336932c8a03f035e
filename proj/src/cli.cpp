#include "prunecert/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "prunecert/certifier.hpp"
#include "prunecert/controlsim.hpp"
#include "prunecert/io.hpp"
#include "prunecert/pruner.hpp"
#include "prunecert/random.hpp"

namespace prunecert::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- config fields -------------------------------------------------------

void read_value(const json& j, fs::path& dst) { dst = j.get<std::string>(); }
void read_value(const json& j, std::optional<double>& dst) {
  if (j.is_null()) dst.reset();
  else dst = j.get<double>();
}
void read_value(const json& j, std::vector<fs::path>& dst) {
  dst.clear();
  for (const auto& e : j) dst.emplace_back(e.get<std::string>());
}

template <typename T>
void read_value(const json& j, T& dst) {
  dst = j.get<T>();
}

struct FieldBinding {
  std::string name;
  std::function<void(RunConfig&, const json&)> read;
  std::function<void(RunConfig&, const RunConfig&)> copy;
};

template <typename T>
FieldBinding field_of(std::string name, T RunConfig::*member) {
  return FieldBinding{std::move(name),
                      [member](RunConfig& c, const json& j) { read_value(j, c.*member); },
                      [member](RunConfig& dst, const RunConfig& src) { dst.*member = src.*member; }};
}

const std::vector<FieldBinding>& field_bindings() {
  static const std::vector<FieldBinding> fields = {
      field_of("model", &RunConfig::model),
      field_of("pruned", &RunConfig::pruned),
      field_of("calibration", &RunConfig::calibration),
      field_of("calibration_samples", &RunConfig::calibration_samples),
      field_of("layers", &RunConfig::layers),
      field_of("sparsity", &RunConfig::sparsity),
      field_of("budget", &RunConfig::budget),
      field_of("allocation", &RunConfig::allocation),
      field_of("compensate", &RunConfig::compensate),
      field_of("refresh_hessian", &RunConfig::refresh_hessian),
      field_of("diagonal", &RunConfig::diagonal),
      field_of("damping", &RunConfig::damping),
      field_of("radius", &RunConfig::radius),
      field_of("box_lower", &RunConfig::box_lower),
      field_of("box_upper", &RunConfig::box_upper),
      field_of("states", &RunConfig::states),
      field_of("samples", &RunConfig::samples),
      field_of("seed", &RunConfig::seed),
      field_of("sampler", &RunConfig::sampler),
      field_of("output_dir", &RunConfig::output_dir),
      field_of("dynamics", &RunConfig::dynamics),
      field_of("dynamics_file", &RunConfig::dynamics_file),
      field_of("dt", &RunConfig::dt),
      field_of("x0", &RunConfig::x0),
      field_of("steps", &RunConfig::steps),
      field_of("inputs", &RunConfig::inputs),
  };
  return fields;
}

const FieldBinding& binding(const std::string& name) {
  for (const auto& f : field_bindings())
    if (f.name == name) return f;
  throw std::logic_error("no config field named " + name);
}

// ---- shared pipeline pieces ---------------------------------------------

fs::path output_dir(const RunConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv("PRUNECERT_OUTPUT_DIR"); env && *env) return env;
  return "prunecert-out";
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

MlpPolicy require_model(const fs::path& p, const char* flag) {
  require(!p.empty(), std::string("missing ") + flag);
  return load_policy(p);
}

Damping parse_damping(const std::string& s) {
  if (s == "auto") return Damping::automatic();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return Damping::fixed(v);
  } catch (const std::exception&) {
  }
  throw UsageError("--damping must be 'auto' or a nonnegative number, got '" + s + "'");
}

Sampler parse_sampler(const std::string& s) {
  if (s == "interior") return Sampler::interior;
  if (s == "sphere") return Sampler::sphere;
  throw UsageError("--sampler must be 'interior' or 'sphere'");
}

std::optional<StateSpace> radius_space(const RunConfig& c, std::size_t dim) {
  const bool has_box = !c.box_lower.empty() || !c.box_upper.empty();
  if (has_box) {
    require(c.box_lower.size() == dim && c.box_upper.size() == dim,
            "--box-lower/--box-upper need " + std::to_string(dim) + " values each");
    if (c.radius) return StateSpace::box_in_ball(c.box_lower, c.box_upper, *c.radius);
    return StateSpace::box(c.box_lower, c.box_upper);
  }
  if (c.radius) return StateSpace::ball(dim, *c.radius);
  return std::nullopt;
}

StateSpace require_space(const RunConfig& c, std::size_t dim) {
  auto s = radius_space(c, dim);
  require(s.has_value(), "need --radius or --box-lower/--box-upper to describe the state space");
  return *s;
}

std::vector<std::size_t> selected_layers(const RunConfig& c, const MlpPolicy& p) {
  if (!c.layers.empty()) {
    for (std::size_t k : c.layers)
      require(k >= 1 && k <= p.depth(),
              "--layers entry " + std::to_string(k) + " outside 1.." + std::to_string(p.depth()));
    return c.layers;
  }
  std::vector<std::size_t> all(p.depth());
  std::iota(all.begin(), all.end(), std::size_t{1});
  return all;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot write file");
  f << text;
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

Dynamics make_dynamics(const RunConfig& c) {
  json spec = json::object();
  if (!c.dynamics_file.empty()) spec = load_json(c.dynamics_file);
  std::string kind = c.dynamics;
  if (kind.empty()) kind = spec.value("kind", std::string());
  require(!kind.empty(), "missing --dynamics (pendulum, double_integrator or linear)");

  auto num = [&](const char* key, double fallback) {
    auto it = spec.find(key);
    return it == spec.end() ? fallback : it->get<double>();
  };
  std::optional<Dynamics> d;
  if (kind == "pendulum") {
    Pendulum p;
    p.dt = c.dt.value_or(num("dt", p.dt));
    p.gravity = num("gravity", p.gravity);
    p.length = num("length", p.length);
    p.mass = num("mass", p.mass);
    p.torque_limit = num("torque_limit", p.torque_limit);
    d = Dynamics::pendulum(p);
  } else if (kind == "double_integrator") {
    d = Dynamics::double_integrator(c.dt.value_or(num("dt", 0.1)));
  } else if (kind == "linear") {
    require(spec.contains("A") && spec.contains("B"), "linear dynamics need A and B in --dynamics-file");
    auto to_matrix = [](const json& j) {
      return Matrix::from_rows(j.get<std::vector<Vector>>());
    };
    d = Dynamics::linear(to_matrix(spec["A"]), to_matrix(spec["B"]));
  } else {
    throw UsageError("unknown dynamics '" + kind + "'");
  }
  if (spec.contains("state_lower") && spec.contains("state_upper"))
    d = d->with_state_box(spec["state_lower"].get<Vector>(), spec["state_upper"].get<Vector>());
  if (spec.contains("action_lower") && spec.contains("action_upper"))
    d = d->with_action_limits(spec["action_lower"].get<Vector>(), spec["action_upper"].get<Vector>());
  return *d;
}

struct AuditRun {
  MlpPolicy original;
  MlpPolicy pruned;
  PrunePlan plan;
  Certificate cert;
};

AuditRun run_audit(const RunConfig& c) {
  MlpPolicy original = require_model(c.model, "--model");
  MlpPolicy pruned = require_model(c.pruned, "--pruned");
  PrunePlan plan = plan_from_policies(original, pruned);
  Certificate cert;
  if (!c.states.empty()) {
    const auto states = load_states_csv(c.states, original.input_dim());
    const StateSpace space = StateSpace::from_states(states);
    cert = multi_layer_budget(original, plan, space);
    AuditSummary a = audit_states(original, pruned, plan, space, states);
    a.seed = c.seed;
    cert.audit = a;
  } else {
    require(c.samples >= 1, "--samples must be at least 1");
    const StateSpace space = require_space(c, original.input_dim());
    cert = multi_layer_budget(original, plan, space);
    AuditOptions opts;
    opts.samples = c.samples;
    opts.seed = substream_seed(c.seed, "audit");
    opts.sampler = parse_sampler(c.sampler);
    AuditSummary a = audit_bound(original, pruned, plan, space, opts);
    a.seed = c.seed;
    cert.audit = a;
  }
  return AuditRun{std::move(original), std::move(pruned), std::move(plan), std::move(cert)};
}

void print_audit(std::ostream& out, const Certificate& cert) {
  out << "budget B_pi = " << fmt(cert.budget) << " (radius " << fmt(cert.radius) << ", "
      << to_string(cert.mode) << ")\n";
  for (const auto& l : cert.layers)
    out << "  layer " << l.k << ": C_max " << fmt(l.c_max) << " x ||dW||_2 " << fmt(l.delta_spectral)
        << " = " << fmt(l.contribution) << "\n";
  if (cert.audit) {
    const auto& a = *cert.audit;
    out << "audit: " << a.samples << " states, max deviation " << fmt(a.max_dev) << ", tightness "
        << fmt(a.tightness) << ", violations " << a.violations << ", "
        << (cert.clean() ? "holds" : "VIOLATED") << "\n";
  }
}

}  // namespace

void apply_config_json(RunConfig& config, const json& j) {
  if (!j.is_object()) throw ParseError("config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    const FieldBinding* f = nullptr;
    for (const auto& b : field_bindings())
      if (b.name == key) f = &b;
    if (!f) throw ParseError("config: unknown key '" + key + "'");
    try {
      f->read(config, value);
    } catch (const json::exception& e) {
      throw ParseError("config." + key + ": " + e.what());
    }
  }
}

int cmd_prune(const RunConfig& c, std::ostream& out) {
  const MlpPolicy policy = require_model(c.model, "--model");
  require(c.sparsity.has_value() != c.budget.has_value(),
          "exactly one of --sparsity and --budget must be given");
  const auto layers = selected_layers(c, policy);
  const auto space = radius_space(c, policy.input_dim());

  std::vector<Vector> states;
  if (!c.calibration.empty()) {
    states = load_states_csv(c.calibration, policy.input_dim());
  } else {
    require(space.has_value(), "need --calibration or a state space (--radius/--box) to sample from");
    require(c.calibration_samples >= 1, "--calibration-samples must be at least 1");
    states = sample_states(*space, c.calibration_samples, substream_seed(c.seed, "calibration"));
  }
  const CalibrationBatch calib = collect_calibration(policy, states);

  RankOptions rank;
  rank.damping = parse_damping(c.damping);
  rank.mode = c.diagonal ? SaliencyMode::diagonal : SaliencyMode::full_inverse;
  const auto entries = rank_weights(policy, calib, layers, rank);

  ApplyOptions apply;
  apply.compensate = c.compensate;
  apply.damping = rank.damping;
  apply.refresh_hessian = c.refresh_hessian;

  PlanMetadata meta;
  meta.seed = c.seed;
  meta.damping = c.damping;
  std::optional<PruneResult> result;
  if (c.sparsity) {
    require(*c.sparsity >= 0.0 && *c.sparsity <= 1.0, "--sparsity must lie in [0, 1]");
    const auto count = static_cast<std::size_t>(std::llround(*c.sparsity * static_cast<double>(entries.size())));
    result = apply_plan(policy, entries, count, calib, apply);
    meta.selection = "sparsity";
    meta.target = *c.sparsity;
  } else {
    require(*c.budget >= 0.0, "--budget must be nonnegative");
    require(space.has_value(), "budget mode needs --radius or --box-lower/--box-upper");
    Allocation alloc = c.allocation.empty() ? Allocation::uniform() : Allocation::proportional(c.allocation);
    const MagnitudeCaps caps = admissible_magnitude(policy, layers, *c.budget, *space, alloc);
    result = apply_plan_within_caps(policy, entries, caps.by_layer(policy.depth()), calib, apply);
    meta.selection = "budget";
    meta.target = *c.budget;
    for (std::size_t i = 0; i < caps.layers.size(); ++i)
      out << "layer " << caps.layers[i] << ": C_max " << fmt(caps.c_max[i]) << ", admissible ||dW||_2 <= "
          << fmt(caps.caps[i]) << "\n";
  }

  const fs::path dir = output_dir(c);
  save_json(dir / "pruned_model.json", policy_to_json(result->pruned));
  save_json(dir / "plan.json", plan_to_json(result->plan, meta));
  out << "pruned " << result->plan.pruned_count() << " of " << entries.size() << " weights";
  for (const auto& d : result->plan.layers)
    out << "; layer " << d.layer << " ||dW||_2 = " << fmt(d.delta_spectral_norm);
  out << "\nwrote " << (dir / "pruned_model.json").string() << " and " << (dir / "plan.json").string()
      << "\n";
  return kOk;
}

int cmd_certify(const RunConfig& c, std::ostream& out) {
  const AuditRun run = run_audit(c);
  const fs::path path = output_dir(c) / "certificate.json";
  save_json(path, certificate_to_json(run.cert));
  print_audit(out, run.cert);
  out << "wrote " << path.string() << "\n";
  return run.cert.clean() ? kOk : kAuditViolation;
}

int cmd_verify(const RunConfig& c, std::ostream& out) {
  const AuditRun run = run_audit(c);
  const auto& a = *run.cert.audit;
  json j = {{"samples", a.samples},
            {"max_dev", a.max_dev},
            {"mean_dev", a.mean_dev},
            {"max_state_bound", a.max_state_bound},
            {"budget", a.budget},
            {"violations", a.violations},
            {"seed", a.seed},
            {"holds", run.cert.holds()}};
  const fs::path path = output_dir(c) / "audit.json";
  save_json(path, j);
  print_audit(out, run.cert);
  return run.cert.clean() ? kOk : kAuditViolation;
}

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  require(c.steps >= 1, "--steps must be at least 1");
  const Dynamics dynamics = make_dynamics(c);
  const MlpPolicy original = require_model(c.model, "--model");
  const MlpPolicy pruned = c.pruned.empty() ? original : load_policy(c.pruned);
  require(c.x0.size() == dynamics.state_dim(),
          "--x0 needs " + std::to_string(dynamics.state_dim()) + " values");

  const PrunePlan plan = plan_from_policies(original, pruned);
  auto space = radius_space(c, original.input_dim());
  if (!space && !dynamics.state_lower().empty())
    space = StateSpace::box(dynamics.state_lower(), dynamics.state_upper());
  require(space.has_value(), "need --radius or --box-lower/--box-upper for unbounded dynamics");
  const Certificate cert = multi_layer_budget(original, plan, *space);
  const DeviationReport report = deviation_audit(dynamics, original, pruned, cert, c.x0, c.steps);

  const fs::path dir = output_dir(c);
  std::ostringstream csv;
  write_deviation_csv(csv, report, dynamics.state_dim(), dynamics.action_dim());
  write_text(dir / "trajectory.csv", csv.str());
  json summary = deviation_summary_json(report);
  summary["dynamics"] = std::string(dynamics.name());
  summary["steps"] = c.steps;
  summary["certificate"] = certificate_to_json(cert);
  save_json(dir / "deviation_report.json", summary);

  out << "max certified deviation " << fmt(report.max_certified_deviation) << " vs B_pi "
      << fmt(cert.budget) << " over " << report.certified_states << " in-ball states ("
      << report.excursions << " excursions, " << report.violations << " violations)\n";
  if (report.error) {
    out << "simulation aborted: " << *report.error << "\n";
    return kUsageError;
  }
  return report.violations == 0 ? kOk : kAuditViolation;
}

int cmd_report(const RunConfig& c, std::ostream& out) {
  require(!c.inputs.empty(), "report needs at least one certificate file");
  json entries = json::array();
  bool all_hold = true;
  double total = 0.0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (const auto& path : c.inputs) {
    Certificate cert;
    try {
      cert = certificate_from_json(load_json(path));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
    json e = {{"source", path.string()},
              {"budget", cert.budget},
              {"radius", cert.radius},
              {"mode", std::string(to_string(cert.mode))},
              {"layers", cert.layers.size()},
              {"holds", cert.clean()}};
    if (cert.audit) {
      e["max_dev"] = cert.audit->max_dev;
      e["violations"] = cert.audit->violations;
      worst_margin = std::min(worst_margin, cert.budget - cert.audit->max_dev);
    }
    all_hold = all_hold && cert.clean();
    total += cert.budget;
    entries.push_back(e);
    out << path.string() << ": B_pi " << fmt(cert.budget) << (cert.clean() ? " holds" : " VIOLATED") << "\n";
  }
  json summary = {{"tool_version", kToolVersion},
                  {"certificates", entries},
                  {"count", entries.size()},
                  {"budget_sum", total},
                  {"worst_margin", std::isfinite(worst_margin) ? json(worst_margin) : json(nullptr)},
                  {"all_hold", all_hold}};
  const fs::path path = output_dir(c) / "report.json";
  save_json(path, summary);
  out << "wrote " << path.string() << "\n";
  return all_hold ? kOk : kAuditViolation;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Second-order pruning with certified control-deviation bounds"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  RunConfig flags;
  std::string config_path;
  std::vector<std::pair<CLI::Option*, std::string>> given;

  auto opt = [&](CLI::App* sub, const std::string& flag, const std::string& field, auto RunConfig::*member,
                 const std::string& help) {
    CLI::Option* o = sub->add_option(flag, flags.*member, help);
    given.emplace_back(o, field);
    return o;
  };
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& field, bool RunConfig::*member,
                  const std::string& help) {
    CLI::Option* o = sub->add_flag(name, flags.*member, help);
    given.emplace_back(o, field);
    return o;
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; flags override its values")
        ->check(CLI::ExistingFile);
    opt(sub, "--model,-m", "model", &RunConfig::model, "policy JSON");
    opt(sub, "--output-dir,-o", "output_dir", &RunConfig::output_dir,
        "output directory (default $PRUNECERT_OUTPUT_DIR or ./prunecert-out)");
    opt(sub, "--seed", "seed", &RunConfig::seed, "run seed");
  };
  auto space_opts = [&](CLI::App* sub) {
    opt(sub, "--radius,-R", "radius", &RunConfig::radius, "state-space radius sup ||s||_2");
    opt(sub, "--box-lower", "box_lower", &RunConfig::box_lower, "state box lower corner")->delimiter(',');
    opt(sub, "--box-upper", "box_upper", &RunConfig::box_upper, "state box upper corner")->delimiter(',');
  };

  CLI::App* prune = app.add_subcommand("prune", "rank weights by OBD saliency and prune");
  common(prune);
  space_opts(prune);
  opt(prune, "--calibration,-c", "calibration", &RunConfig::calibration, "calibration states CSV");
  opt(prune, "--calibration-samples", "calibration_samples", &RunConfig::calibration_samples,
      "states sampled from the state space when no CSV is given");
  opt(prune, "--layers,-l", "layers", &RunConfig::layers, "1-based layers to prune (default all)")
      ->delimiter(',');
  opt(prune, "--sparsity", "sparsity", &RunConfig::sparsity, "fraction of ranked weights to remove");
  opt(prune, "--budget,--epsilon", "budget", &RunConfig::budget, "control-error budget epsilon");
  opt(prune, "--allocation", "allocation", &RunConfig::allocation,
      "budget split weights per selected layer (default uniform)")
      ->delimiter(',');
  flag(prune, "--compensate", "compensate", &RunConfig::compensate, "apply OBS compensation");
  flag(prune, "--refresh-hessian", "refresh_hessian", &RunConfig::refresh_hessian,
       "rebuild Hessians from the partially pruned policy");
  flag(prune, "--diagonal", "diagonal", &RunConfig::diagonal, "diagonal (1/H_qq) saliency");
  opt(prune, "--damping", "damping", &RunConfig::damping, "'auto' or a nonnegative lambda");

  auto audit_opts = [&](CLI::App* sub) {
    common(sub);
    space_opts(sub);
    opt(sub, "--pruned,-p", "pruned", &RunConfig::pruned, "pruned policy JSON");
    opt(sub, "--states", "states", &RunConfig::states, "validation states CSV (replaces sampling)");
    opt(sub, "--samples,-n", "samples", &RunConfig::samples, "audit sample count");
    opt(sub, "--sampler", "sampler", &RunConfig::sampler, "interior or sphere");
  };
  CLI::App* certify = app.add_subcommand("certify", "compute B_pi and audit it");
  audit_opts(certify);
  CLI::App* verify = app.add_subcommand("verify", "audit only");
  audit_opts(verify);

  CLI::App* simulate = app.add_subcommand("simulate", "closed-loop rollout with per-state audit");
  common(simulate);
  space_opts(simulate);
  opt(simulate, "--pruned,-p", "pruned", &RunConfig::pruned, "pruned policy JSON (default: model)");
  opt(simulate, "--dynamics", "dynamics", &RunConfig::dynamics, "pendulum, double_integrator or linear");
  opt(simulate, "--dynamics-file", "dynamics_file", &RunConfig::dynamics_file, "dynamics JSON");
  opt(simulate, "--dt", "dt", &RunConfig::dt, "integration step");
  opt(simulate, "--x0", "x0", &RunConfig::x0, "initial state")->delimiter(',');
  opt(simulate, "--steps,-T", "steps", &RunConfig::steps, "horizon T");

  CLI::App* report = app.add_subcommand("report", "merge certificates into one summary");
  common(report);
  opt(report, "inputs", "inputs", &RunConfig::inputs, "certificate files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) apply_config_json(config, load_json(config_path));
    for (const auto& [o, field] : given)
      if (o->count() > 0) binding(field).copy(config, flags);

    if (prune->parsed()) return cmd_prune(config, out);
    if (certify->parsed()) return cmd_certify(config, out);
    if (verify->parsed()) return cmd_verify(config, out);
    if (simulate->parsed()) return cmd_simulate(config, out);
    if (report->parsed()) return cmd_report(config, out);
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
}

}  // namespace prunecert::cli
