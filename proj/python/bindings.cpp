#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "prunecert/certifier.hpp"
#include "prunecert/controlsim.hpp"
#include "prunecert/io.hpp"
#include "prunecert/pruner.hpp"

namespace py = pybind11;
using namespace prunecert;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Vector to_vector(const Array& a) {
  if (a.ndim() != 1) throw DimensionError("expected a 1-D array");
  return Vector(a.data(), a.data() + a.shape(0));
}

std::vector<Vector> to_rows(const Array& a) {
  const Matrix m = to_matrix(a);
  std::vector<Vector> out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(m.row_vector(r));
  return out;
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Array from_vector(std::span<const double> v) {
  Array out(v.size());
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array stack(const std::vector<Vector>& rows, std::size_t width) {
  Array out({rows.size(), width});
  double* p = out.mutable_data();
  for (const auto& r : rows) p = std::copy(r.begin(), r.end(), p);
  return out;
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

Damping damping_of(const py::object& d) {
  if (d.is_none()) return Damping::none();
  if (py::isinstance<py::str>(d)) {
    if (d.cast<std::string>() == "auto") return Damping::automatic();
    throw std::invalid_argument("damping must be 'auto', None or a nonnegative number");
  }
  return Damping::fixed(d.cast<double>());
}

StateSpace space_of(std::size_t dim, std::optional<double> radius, std::optional<Array> lower,
                    std::optional<Array> upper) {
  if (lower || upper) {
    if (!lower || !upper) throw std::invalid_argument("box needs both lower and upper");
    if (radius) return StateSpace::box_in_ball(to_vector(*lower), to_vector(*upper), *radius);
    return StateSpace::box(to_vector(*lower), to_vector(*upper));
  }
  if (!radius) throw std::invalid_argument("need radius or box bounds");
  return StateSpace::ball(dim, *radius);
}

Sampler sampler_of(const std::string& s) {
  if (s == "interior") return Sampler::interior;
  if (s == "sphere") return Sampler::sphere;
  throw std::invalid_argument("sampler must be 'interior' or 'sphere'");
}

Dynamics dynamics_of(const std::string& kind, std::optional<double> dt) {
  if (kind == "pendulum") {
    Pendulum p;
    if (dt) p.dt = *dt;
    return Dynamics::pendulum(p);
  }
  if (kind == "double_integrator") return Dynamics::double_integrator(dt.value_or(0.1));
  throw std::invalid_argument("dynamics must be 'pendulum' or 'double_integrator'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pruning and control-deviation certification for MLP policies";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<SingularMatrixError>(m, "SingularMatrixError", PyExc_ArithmeticError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);
  py::register_exception<UncertifiedActivationError>(m, "UncertifiedActivationError", PyExc_ValueError);

  m.def(
      "spectral_norm",
      [](const Array& a, double tol, int max_iter) {
        SpectralOptions o;
        o.tol = tol;
        o.max_iter = max_iter;
        return spectral_norm(to_matrix(a), o);
      },
      py::arg("a"), py::arg("tol") = 1e-10, py::arg("max_iter") = 10'000);
  m.def("frobenius_norm", [](const Array& a) { return frobenius_norm(to_matrix(a)); });
  m.def("gram", [](const Array& x) { return from_matrix(gram(to_matrix(x))); }, "2 X X^T");
  m.def(
      "damped_inverse", [](const Array& h, double lam) { return from_matrix(damped_inverse(to_matrix(h), lam)); },
      py::arg("h"), py::arg("lam") = 0.0);

  py::class_<MlpPolicy>(m, "Policy")
      .def_static("load", [](const std::string& path) { return load_policy(path); })
      .def_static("from_json", [](const std::string& text) { return policy_from_json(nlohmann::json::parse(text)); })
      .def("to_json", [](const MlpPolicy& p) { return dump_json(policy_to_json(p)); })
      .def("save", [](const MlpPolicy& p, const std::string& path) { save_json(path, policy_to_json(p)); })
      .def_property_readonly("depth", &MlpPolicy::depth)
      .def_property_readonly("input_dim", &MlpPolicy::input_dim)
      .def_property_readonly("output_dim", &MlpPolicy::output_dim)
      .def_property_readonly("certified", &MlpPolicy::certified)
      .def("weight", [](const MlpPolicy& p, std::size_t k) { return from_matrix(p.layer(k).weight); })
      .def("bias", [](const MlpPolicy& p, std::size_t k) { return from_vector(p.layer(k).bias); })
      .def("activation", [](const MlpPolicy& p, std::size_t k) { return std::string(p.layer(k).activation.name()); })
      .def("with_weight",
           [](const MlpPolicy& p, std::size_t k, const Array& w) { return p.with_weight(k, to_matrix(w)); })
      .def("__call__", [](const MlpPolicy& p, const Array& s) { return from_vector(forward(p, to_vector(s))); })
      .def("forward", [](const MlpPolicy& p, const Array& s) { return from_vector(forward(p, to_vector(s))); })
      .def("trace",
           [](const MlpPolicy& p, const Array& s) {
             const ForwardTrace t = forward_trace(p, to_vector(s));
             py::list post;
             for (const auto& v : t.post_activations) post.append(from_vector(v));
             py::dict d;
             d["post_activations"] = post;
             d["pre_norms"] = t.pre_activation_norms;
             d["post_norms"] = t.post_activation_norms;
             return d;
           })
      .def("lipschitz_upper", [](const MlpPolicy& p) { return lipschitz_upper(p); })
      .def("__eq__", [](const MlpPolicy& a, const MlpPolicy& b) { return a == b; });

  py::class_<CalibrationBatch>(m, "CalibrationBatch")
      .def_property_readonly("samples", &CalibrationBatch::samples)
      .def("input", [](const CalibrationBatch& c, std::size_t k) { return from_matrix(c.input(k)); });
  m.def(
      "collect_calibration",
      [](const MlpPolicy& p, const Array& states) { return collect_calibration(p, to_rows(states)); },
      py::arg("policy"), py::arg("states"), "states is an (n, input_dim) array");

  py::class_<SaliencyEntry>(m, "SaliencyEntry")
      .def_readonly("layer", &SaliencyEntry::layer)
      .def_readonly("row", &SaliencyEntry::row)
      .def_readonly("col", &SaliencyEntry::col)
      .def_readonly("weight", &SaliencyEntry::weight)
      .def_readonly("saliency", &SaliencyEntry::saliency)
      .def("__repr__", [](const SaliencyEntry& e) {
        return "SaliencyEntry(layer=" + std::to_string(e.layer) + ", row=" + std::to_string(e.row) +
               ", col=" + std::to_string(e.col) + ", saliency=" + std::to_string(e.saliency) + ")";
      });
  m.def(
      "rank_weights",
      [](const MlpPolicy& p, const CalibrationBatch& c, std::vector<std::size_t> layers, const py::object& damping,
         bool diagonal) {
        RankOptions o;
        o.damping = damping_of(damping);
        o.mode = diagonal ? SaliencyMode::diagonal : SaliencyMode::full_inverse;
        return rank_weights(p, c, layers, o);
      },
      py::arg("policy"), py::arg("calibration"), py::arg("layers"), py::arg("damping") = "auto",
      py::arg("diagonal") = false);
  m.def("obs_compensate", [](const Array& row, std::size_t q, const Array& h_inv) {
    return from_vector(obs_compensate(to_vector(row), q, to_matrix(h_inv)));
  });
  m.def("activation_loss", [](const Array& w, const Array& w_hat, const Array& x) {
    return activation_loss(to_matrix(w), to_matrix(w_hat), to_matrix(x));
  });

  py::class_<PrunePlan>(m, "PrunePlan")
      .def_readonly("compensated", &PrunePlan::compensated)
      .def_property_readonly("pruned_count", &PrunePlan::pruned_count)
      .def_property_readonly("layers",
                             [](const PrunePlan& p) {
                               std::vector<std::size_t> out;
                               for (const auto& l : p.layers) out.push_back(l.layer);
                               return out;
                             })
      .def("delta",
           [](const PrunePlan& p, std::size_t k) {
             const LayerDelta* d = p.find(k);
             if (!d) throw py::key_error("layer not in plan");
             return from_matrix(d->delta);
           })
      .def("delta_spectral_norm",
           [](const PrunePlan& p, std::size_t k) {
             const LayerDelta* d = p.find(k);
             if (!d) throw py::key_error("layer not in plan");
             return d->delta_spectral_norm;
           })
      .def("to_json", [](const PrunePlan& p) { return dump_json(plan_to_json(p, {})); });

  m.def(
      "apply_plan",
      [](const MlpPolicy& p, const std::vector<SaliencyEntry>& entries, std::size_t count,
         const CalibrationBatch& c, bool compensate, const py::object& damping) {
        ApplyOptions o;
        o.compensate = compensate;
        o.damping = damping_of(damping);
        PruneResult r = apply_plan(p, entries, count, c, o);
        return py::make_tuple(std::move(r.pruned), std::move(r.plan));
      },
      py::arg("policy"), py::arg("entries"), py::arg("count"), py::arg("calibration"),
      py::arg("compensate") = false, py::arg("damping") = "auto");
  m.def("plan_from_policies", [](const MlpPolicy& a, const MlpPolicy& b) { return plan_from_policies(a, b); });

  m.def(
      "bound_constant_state",
      [](const MlpPolicy& p, std::size_t k, const Array& s) { return bound_constant_state(p, k, to_vector(s)); });
  m.def(
      "bound_constant_max",
      [](const MlpPolicy& p, std::size_t k, double radius) {
        return bound_constant_max(p, k, StateSpace::ball(p.input_dim(), radius));
      },
      py::arg("policy"), py::arg("k"), py::arg("radius"));
  m.def(
      "multi_layer_budget",
      [](const MlpPolicy& p, const PrunePlan& plan, std::optional<double> radius, std::optional<Array> lower,
         std::optional<Array> upper) {
        return to_python(certificate_to_json(
            multi_layer_budget(p, plan, space_of(p.input_dim(), radius, std::move(lower), std::move(upper)))));
      },
      py::arg("policy"), py::arg("plan"), py::arg("radius") = py::none(), py::arg("box_lower") = py::none(),
      py::arg("box_upper") = py::none());
  m.def(
      "admissible_magnitude",
      [](const MlpPolicy& p, std::vector<std::size_t> layers, double epsilon, double radius,
         std::optional<std::vector<double>> weights) {
        const Allocation a = weights ? Allocation::proportional(*weights) : Allocation::uniform();
        const MagnitudeCaps c = admissible_magnitude(p, layers, epsilon, StateSpace::ball(p.input_dim(), radius), a);
        py::dict d;
        d["layers"] = c.layers;
        d["c_max"] = c.c_max;
        d["caps"] = c.caps;
        return d;
      },
      py::arg("policy"), py::arg("layers"), py::arg("epsilon"), py::arg("radius"), py::arg("weights") = py::none());
  m.def(
      "certify",
      [](const MlpPolicy& original, const MlpPolicy& pruned, std::optional<double> radius,
         std::optional<Array> lower, std::optional<Array> upper, std::size_t samples, std::uint64_t seed,
         const std::string& sampler) {
        const PrunePlan plan = plan_from_policies(original, pruned);
        const StateSpace space = space_of(original.input_dim(), radius, std::move(lower), std::move(upper));
        py::gil_scoped_release release;
        const Certificate c = certify(original, pruned, plan, space, {samples, seed, sampler_of(sampler)});
        py::gil_scoped_acquire acquire;
        return to_python(certificate_to_json(c));
      },
      py::arg("original"), py::arg("pruned"), py::arg("radius") = py::none(), py::arg("box_lower") = py::none(),
      py::arg("box_upper") = py::none(), py::arg("samples") = 10'000, py::arg("seed") = 0,
      py::arg("sampler") = "interior");

  m.def(
      "rollout",
      [](const std::string& dynamics, const MlpPolicy& p, const Array& x0, std::size_t steps,
         std::optional<double> dt) {
        const Dynamics d = dynamics_of(dynamics, dt);
        const Trajectory t = rollout(d, p, to_vector(x0), steps);
        return py::make_tuple(stack(t.states, d.state_dim()), stack(t.actions, p.output_dim()));
      },
      py::arg("dynamics"), py::arg("policy"), py::arg("x0"), py::arg("steps"), py::arg("dt") = py::none());
  m.def(
      "deviation_audit",
      [](const std::string& dynamics, const MlpPolicy& original, const MlpPolicy& pruned, const Array& x0,
         std::size_t steps, std::optional<double> dt) {
        const Dynamics d = dynamics_of(dynamics, dt);
        const StateSpace space = StateSpace::box(d.state_lower(), d.state_upper());
        const Certificate cert = multi_layer_budget(original, plan_from_policies(original, pruned), space);
        return to_python(deviation_summary_json(deviation_audit(d, original, pruned, cert, to_vector(x0), steps)));
      },
      py::arg("dynamics"), py::arg("original"), py::arg("pruned"), py::arg("x0"), py::arg("steps"),
      py::arg("dt") = py::none());
}
