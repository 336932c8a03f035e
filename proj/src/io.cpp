#include "prunecert/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace prunecert {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ParseError(where + ": " + what);
}

const json& field(const json& obj, const char* name, const std::string& where) {
  if (!obj.is_object()) fail(where, "expected an object");
  auto it = obj.find(name);
  if (it == obj.end()) fail(where, std::string("missing field '") + name + "'");
  return *it;
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number, got " + std::string(j.type_name()));
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(where, "value is not finite");
  return v;
}

Vector number_array(const json& j, const std::string& where) {
  if (!j.is_array()) fail(where, "expected an array");
  Vector out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

Matrix matrix_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) fail(where, "expected a nonempty array of rows");
  std::vector<Vector> rows;
  for (std::size_t r = 0; r < j.size(); ++r) {
    rows.push_back(number_array(j[r], where + "[" + std::to_string(r) + "]"));
    if (rows.back().size() != rows.front().size())
      fail(where + "[" + std::to_string(r) + "]", "row length differs from row 0");
  }
  if (rows.front().empty()) fail(where, "rows must be nonempty");
  return Matrix::from_rows(rows);
}

json matrix_to(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(m.row_vector(r));
  return rows;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

// JSON has no infinity; unbounded values are written as null.
json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double number_or_inf(const json& j, const std::string& where) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (!j.is_number()) fail(where, "expected a number or null");
  return j.get<double>();
}

}  // namespace

MlpPolicy policy_from_json(const json& j) {
  const json& layers = field(j, "layers", "model");
  if (!layers.is_array() || layers.empty()) fail("model.layers", "expected a nonempty array");
  std::vector<Layer> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "model.layers[" + std::to_string(i) + "]";
    const json& l = layers[i];
    Layer layer;
    layer.weight = matrix_from(field(l, "weights", where), where + ".weights");
    layer.bias = number_array(field(l, "bias", where), where + ".bias");
    const json& act = field(l, "activation", where);
    const std::string aw = where + ".activation";
    const json& kind = field(act, "kind", aw);
    if (!kind.is_string()) fail(aw + ".kind", "expected a string");
    double alpha = 1.0;
    if (auto it = act.find("alpha"); it != act.end()) alpha = number(*it, aw + ".alpha");
    try {
      layer.activation = make_activation(kind.get<std::string>(), alpha);
    } catch (const std::invalid_argument& e) {
      fail(aw, e.what());
    }
    out.push_back(std::move(layer));
  }
  try {
    return MlpPolicy(std::move(out));
  } catch (const std::exception& e) {
    fail("model", e.what());
  }
}

json policy_to_json(const MlpPolicy& policy) {
  json layers = json::array();
  for (const Layer& l : policy.layers()) {
    json act = {{"kind", std::string(l.activation.name())}};
    if (l.activation.has_alpha()) act["alpha"] = l.activation.alpha();
    layers.push_back({{"weights", matrix_to(l.weight)}, {"bias", l.bias}, {"activation", act}});
  }
  return json{{"layers", layers}};
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

MlpPolicy load_policy(const std::filesystem::path& path) {
  const json j = load_json(path);
  try {
    return policy_from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

void save_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write file");
  out << dump_json(j);
}

std::vector<Vector> parse_states_csv(std::istream& in, std::size_t dim, const std::string& source) {
  std::vector<Vector> states;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Vector row;
    std::size_t start = 0;
    std::size_t col = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      cell = b == std::string::npos ? "" : cell.substr(b, e - b + 1);
      ++col;
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        std::ostringstream os;
        os << source << ":" << lineno << ": field " << col << " is not a finite number ('" << cell << "')";
        throw ParseError(os.str());
      }
      row.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    const std::size_t want = dim ? dim : (states.empty() ? row.size() : states.front().size());
    if (row.size() != want) {
      std::ostringstream os;
      os << source << ":" << lineno << ": expected " << want << " fields, got " << row.size();
      throw ParseError(os.str());
    }
    states.push_back(std::move(row));
  }
  if (states.empty()) throw ParseError(source + ": no states found");
  return states;
}

std::vector<Vector> load_states_csv(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  return parse_states_csv(in, dim, path.string());
}

void write_states_csv(std::ostream& out, const std::vector<Vector>& states) {
  for (const auto& s : states) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << format_double(s[i]);
    out << "\n";
  }
}

json plan_to_json(const PrunePlan& plan, const PlanMetadata& meta) {
  json layers = json::array();
  for (const auto& d : plan.layers) {
    json mask = json::array();
    for (const auto& [r, c] : d.mask) mask.push_back({r, c});
    layers.push_back({{"k", d.layer},
                      {"delta_spectral", d.delta_spectral_norm},
                      {"pruned", d.mask.size()},
                      {"mask", mask},
                      {"saliencies", d.saliencies},
                      {"delta", matrix_to(d.delta)}});
  }
  return json{{"tool_version", kToolVersion},
              {"seed", meta.seed},
              {"selection", meta.selection},
              {"target", meta.target},
              {"damping", meta.damping},
              {"compensated", plan.compensated},
              {"layers", layers}};
}

PrunePlan plan_from_json(const json& j) {
  PrunePlan plan;
  const json& comp = field(j, "compensated", "plan");
  if (!comp.is_boolean()) fail("plan.compensated", "expected a boolean");
  plan.compensated = comp.get<bool>();
  const json& layers = field(j, "layers", "plan");
  if (!layers.is_array()) fail("plan.layers", "expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "plan.layers[" + std::to_string(i) + "]";
    LayerDelta d;
    const json& k = field(layers[i], "k", where);
    if (!k.is_number_unsigned()) fail(where + ".k", "expected a positive integer");
    d.layer = k.get<std::size_t>();
    d.delta_spectral_norm = number(field(layers[i], "delta_spectral", where), where + ".delta_spectral");
    d.delta = matrix_from(field(layers[i], "delta", where), where + ".delta");
    const json& mask = field(layers[i], "mask", where);
    if (!mask.is_array()) fail(where + ".mask", "expected an array");
    for (std::size_t m = 0; m < mask.size(); ++m) {
      const json& rc = mask[m];
      if (!rc.is_array() || rc.size() != 2 || !rc[0].is_number_unsigned() || !rc[1].is_number_unsigned())
        fail(where + ".mask[" + std::to_string(m) + "]", "expected [row, col]");
      d.mask.emplace_back(rc[0].get<std::size_t>(), rc[1].get<std::size_t>());
    }
    if (auto it = layers[i].find("saliencies"); it != layers[i].end())
      d.saliencies = number_array(*it, where + ".saliencies");
    plan.layers.push_back(std::move(d));
  }
  return plan;
}

json certificate_to_json(const Certificate& cert) {
  json layers = json::array();
  for (const auto& l : cert.layers)
    layers.push_back({{"k", l.k},
                      {"c_max", l.c_max},
                      {"delta_spectral", l.delta_spectral},
                      {"contribution", l.contribution}});
  json out = {{"tool_version", kToolVersion},
              {"layers", layers},
              {"budget", cert.budget},
              {"radius", cert.radius},
              {"mode", std::string(to_string(cert.mode))}};
  if (cert.audit) {
    const AuditSummary& a = *cert.audit;
    out["audit"] = {{"samples", a.samples},
                    {"max_dev", a.max_dev},
                    {"mean_dev", a.mean_dev},
                    {"max_state_bound", a.max_state_bound},
                    {"margin", a.margin},
                    {"tightness", finite_or_null(a.tightness)},
                    {"violations", a.violations},
                    {"seed", a.seed}};
  }
  out["holds"] = cert.holds();
  return out;
}

Certificate certificate_from_json(const json& j) {
  Certificate cert;
  cert.budget = number(field(j, "budget", "certificate"), "certificate.budget");
  cert.radius = number(field(j, "radius", "certificate"), "certificate.radius");
  if (auto it = j.find("mode"); it != j.end() && *it == "validation") cert.mode = BoundMode::validation;
  const json& layers = field(j, "layers", "certificate");
  if (!layers.is_array()) fail("certificate.layers", "expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "certificate.layers[" + std::to_string(i) + "]";
    LayerBound lb;
    const json& k = field(layers[i], "k", where);
    if (!k.is_number_unsigned()) fail(where + ".k", "expected a positive integer");
    lb.k = k.get<std::size_t>();
    lb.c_max = number(field(layers[i], "c_max", where), where + ".c_max");
    lb.delta_spectral = number(field(layers[i], "delta_spectral", where), where + ".delta_spectral");
    lb.contribution = number(field(layers[i], "contribution", where), where + ".contribution");
    cert.layers.push_back(lb);
  }
  if (auto it = j.find("audit"); it != j.end()) {
    const json& a = *it;
    AuditSummary s;
    s.samples = field(a, "samples", "certificate.audit").get<std::size_t>();
    s.max_dev = number(field(a, "max_dev", "certificate.audit"), "certificate.audit.max_dev");
    s.violations = field(a, "violations", "certificate.audit").get<std::size_t>();
    s.seed = field(a, "seed", "certificate.audit").get<std::uint64_t>();
    s.mean_dev = a.value("mean_dev", 0.0);
    s.max_state_bound = a.value("max_state_bound", 0.0);
    s.budget = cert.budget;
    s.margin = cert.budget - s.max_dev;
    if (auto t = a.find("tightness"); t != a.end()) s.tightness = number_or_inf(*t, "certificate.audit.tightness");
    const json& holds = field(j, "holds", "certificate");
    if (!holds.is_boolean()) fail("certificate.holds", "expected a boolean");
    s.holds = holds.get<bool>();
    cert.audit = s;
  }
  return cert;
}

void write_deviation_csv(std::ostream& out, const DeviationReport& report, std::size_t state_dim,
                         std::size_t action_dim) {
  out << "t,trajectory";
  for (std::size_t i = 0; i < state_dim; ++i) out << ",x_" << i;
  for (std::size_t i = 0; i < action_dim; ++i) out << ",u_" << i;
  for (std::size_t i = 0; i < action_dim; ++i) out << ",uhat_" << i;
  out << ",deviation,bound,in_ball,divergence\n";
  for (const auto& row : report.rows) {
    out << row.t << "," << (row.source == TrajectorySource::original ? "original" : "pruned");
    for (double x : row.state) out << "," << format_double(x);
    for (double u : row.action_original) out << "," << format_double(u);
    for (double u : row.action_pruned) out << "," << format_double(u);
    out << "," << format_double(row.deviation) << "," << format_double(row.bound) << ","
        << (row.in_ball ? 1 : 0) << "," << format_double(row.divergence) << "\n";
  }
  if (report.error) {
    std::string msg = *report.error;
    for (char& c : msg)
      if (c == ',' || c == '\n') c = ' ';
    out << "ERROR," << msg << "\n";
  }
}

json deviation_summary_json(const DeviationReport& report) {
  json out = {{"certified_states", report.certified_states},
              {"violations", report.violations},
              {"excursions", report.excursions},
              {"max_certified_deviation", report.max_certified_deviation},
              {"max_bound", report.max_bound},
              {"budget", report.budget},
              {"max_divergence_uncertified", report.max_divergence},
              {"steps_completed", report.rows.empty() ? 0 : report.rows.back().t}};
  out["error"] = report.error ? json(*report.error) : json(nullptr);
  return out;
}

}  // namespace prunecert
