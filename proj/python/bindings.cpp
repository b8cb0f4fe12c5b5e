// Python bindings.  Configs cross the boundary as JSON text so the Python side
// sees exactly the keys the CLI reads.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "beki/acceptance.hpp"
#include "beki/constraints.hpp"
#include "beki/ensemble.hpp"
#include "beki/errors.hpp"
#include "beki/experiments.hpp"
#include "beki/forward_models.hpp"
#include "beki/integrator.hpp"

namespace py = pybind11;
using namespace beki;

namespace {

py::dict stats_dict(const EnsembleStats& s) {
  py::dict d;
  d["mean"] = s.mean;
  d["centered"] = s.centered;
  d["cov"] = s.cov;
  d["cross_cov"] = s.cross_cov;
  d["mean_g"] = s.mean_g;
  d["spread"] = s.spread;
  return d;
}

py::dict record_dict(const TrajectoryRecord& rec) {
  py::dict cols;
  for (const auto& name : csv_columns()) cols[py::str(name)] = rec.column(name);
  for (const char* name : {"grad_flow_err", "phi_misfit", "mean_norm", "max_particle_norm",
                           "accepted", "rejected_error", "rejected_feasibility", "rhs_evals"}) {
    cols[name] = rec.column(name);
  }
  py::dict meta;
  meta["name"] = rec.meta.name;
  meta["config_hash"] = rec.meta.config_hash;
  meta["variant"] = rec.meta.variant;
  meta["reference_point"] = rec.meta.reference_point;
  meta["runtime_seconds"] = rec.meta.runtime_seconds;
  if (rec.meta.abort) {
    py::dict a;
    a["reason"] = rec.meta.abort->reason;
    a["message"] = rec.meta.abort->message;
    a["t"] = rec.meta.abort->t;
    a["margin"] = rec.meta.abort->margin;
    a["tau"] = rec.meta.abort->tau;
    meta["abort"] = a;
  } else {
    meta["abort"] = py::none();
  }
  py::dict out;
  out["columns"] = cols;
  out["meta"] = meta;
  return out;
}

TheoryConstants constants_from(double sigma_min, Index j) {
  TheoryConstants k;
  k.sigma_min = sigma_min;
  k.j = j;
  return k;
}

}  // namespace

PYBIND11_MODULE(_beki, m) {
  m.doc() = "Ensemble Kalman inversion with log-barrier constraints";

  auto base = py::register_exception<Error>(m, "BekiError", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<InvalidBounds>(m, "InvalidBounds", base.ptr());
  py::register_exception<FeasibilityMarginError>(m, "FeasibilityMarginError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<UndefinedRate>(m, "UndefinedRate", base.ptr());
  py::register_exception<StiffnessAbort>(m, "StiffnessAbort", base.ptr());

  // ensemble
  m.def(
      "compute_stats",
      [](const Matrix& particles, const std::optional<Matrix>& g_values) {
        const Ensemble ens(particles);
        return stats_dict(g_values ? compute_stats(ens, *g_values) : compute_stats(ens));
      },
      py::arg("particles"), py::arg("g_values") = py::none(),
      "Empirical statistics (1/J normalization) of a d x J particle matrix.");
  m.def(
      "subspace_distance",
      [](const Matrix& initial, const Matrix& particles) {
        return subspace_distance(Ensemble(particles), AffineSubspace::from_ensemble(Ensemble(initial)));
      },
      py::arg("initial"), py::arg("particles"));

  // constraints
  py::class_<ConstraintSet>(m, "ConstraintSet")
      .def("__len__", &ConstraintSet::size)
      .def("values", &ConstraintSet::values)
      .def("strictly_feasible", &ConstraintSet::strictly_feasible);
  m.def(
      "make_box",
      [](const Vector& lower, const Vector& upper) {
        BoxBounds b{lower, upper, {}};
        for (Index i = 0; i < lower.size(); ++i) b.indices.push_back(i);
        return make_box(b);
      },
      py::arg("lower"), py::arg("upper"));
  m.def(
      "make_norm_ball",
      [](const Matrix& c0, double radius) {
        return make_norm_ball(std::make_shared<const SpdMatrix>(c0), radius);
      },
      py::arg("c0"), py::arg("radius"));
  m.def("barrier_value", &barrier_value, py::arg("constraints"), py::arg("u"), py::arg("tau"));
  m.def("barrier_drift", &barrier_drift, py::arg("constraints"), py::arg("u"), py::arg("tau"));
  m.def("feasibility_margin", &feasibility_margin, py::arg("constraints"), py::arg("u"));
  m.def(
      "project_box",
      [](const Vector& lower, const Vector& upper, const Vector& u) {
        BoxBounds b{lower, upper, {}};
        for (Index i = 0; i < lower.size(); ++i) b.indices.push_back(i);
        b.validate();
        return project_box(b, u);
      },
      py::arg("lower"), py::arg("upper"), py::arg("u"));

  // forward models
  py::class_<Heat1DModel>(m, "Heat1DModel")
      .def_readonly("n_interior", &Heat1DModel::n_interior)
      .def_readonly("a", &Heat1DModel::a)
      .def_readonly("grid", &Heat1DModel::grid)
      .def_readonly("eps", &Heat1DModel::eps)
      .def("apply", [](const Heat1DModel& h, const Vector& u) { return h.map()->apply(u); })
      .def("jacobian", [](const Heat1DModel& h, const Vector& u) { return h.map()->jacobian(u); });
  m.def("build_heat1d", &build_heat1d, py::arg("dx") = 0.01, py::arg("dt") = 0.05,
        py::arg("eps") = 0.01);

  py::class_<Darcy2DModel, std::shared_ptr<Darcy2DModel>>(m, "Darcy2DModel")
      .def(py::init<int, double, int, std::uint64_t>(), py::arg("n"), py::arg("f") = 1.0,
           py::arg("k_obs") = 50, py::arg("obs_seed") = 7)
      .def("apply", &Darcy2DModel::apply)
      .def("jacobian", &Darcy2DModel::jacobian)
      .def("pressure", [](const Darcy2DModel& d, const Vector& u) { return d.solve(u).pressure; })
      .def("interpolate", &Darcy2DModel::interpolate)
      .def_property_readonly("obs_points", &Darcy2DModel::obs_points)
      .def_property_readonly("input_dim", &Darcy2DModel::input_dim);

  // integrator
  m.def(
      "solve_ode",
      [](const std::function<Vector(double, const Vector&)>& rhs, double t0, const Vector& x0,
         const std::vector<double>& times, double rtol, double atol) {
        IntegratorConfig cfg;
        cfg.rtol = rtol;
        cfg.atol = atol;
        const OdeSolution sol = solve_ode(rhs, t0, x0, times, cfg);
        return py::make_tuple(sol.t, sol.x, sol.stats.accepted);
      },
      py::arg("rhs"), py::arg("t0"), py::arg("x0"), py::arg("times"), py::arg("rtol") = 1e-6,
      py::arg("atol") = 1e-9, "Returns (times, states, accepted steps).");
  m.def("checkpoint_times", &checkpoint_times, py::arg("t_final"), py::arg("count"));

  // experiments
  m.def("preset_names", &preset_names);
  m.def(
      "preset",
      [](const std::string& name, bool desk) { return config_to_json(preset(name, desk)); },
      py::arg("name"), py::arg("desk") = false, "Preset config as JSON text.");
  m.def(
      "config_hash", [](const std::string& text) { return config_hash(parse_config(text)); },
      py::arg("config_json"));
  m.def(
      "run_experiment",
      [](const std::string& text, const std::string& output_dir) {
        ExperimentConfig cfg = parse_config(text);
        if (!output_dir.empty()) cfg.output_dir = output_dir;
        ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = run_experiment(cfg);
        }
        py::dict out = record_dict(res.record);
        out["final_mean"] = res.final_mean;
        out["sigma_min"] = res.constants.sigma_min;
        out["ensemble_size"] = res.constants.j;
        out["reference_error"] = res.reference.error;
        return out;
      },
      py::arg("config_json"), py::arg("output_dir") = "",
      "Runs a config (JSON text) and returns the record columns and metadata.");
  m.def("rate_estimate",
        py::overload_cast<const std::vector<double>&, const std::vector<double>&, double>(
            &rate_estimate),
        py::arg("t"), py::arg("values"), py::arg("window") = 0.3);
  m.def(
      "collapse_bound_violations",
      [](const std::vector<double>& t, const std::vector<double>& v_e, double sigma_min, Index j,
         double slack) {
        TrajectoryRecord rec;
        for (std::size_t i = 0; i < t.size(); ++i) {
          CheckpointRow r;
          r.t = t[i];
          r.v_e = v_e.at(i);
          rec.rows.push_back(r);
        }
        const BoundOverlay o = collapse_bound_overlay(rec, constants_from(sigma_min, j), slack);
        return py::make_tuple(o.bound, o.violations);
      },
      py::arg("t"), py::arg("v_e"), py::arg("sigma_min"), py::arg("ensemble_size"),
      py::arg("slack") = 0.05);
  m.def(
      "verify",
      [](const std::vector<std::string>& only) {
        AcceptanceOptions opts;
        opts.only = only;
        std::vector<CriterionResult> results;
        {
          py::gil_scoped_release release;
          results = run_acceptance(opts);
        }
        py::list out;
        for (const auto& r : results) {
          py::dict d;
          d["id"] = r.id;
          d["title"] = r.title;
          d["passed"] = r.passed;
          d["detail"] = r.detail;
          d["seconds"] = r.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("only") = std::vector<std::string>{});
}
