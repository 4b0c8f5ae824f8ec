// Python bindings: analytic helpers, full runs and the device simulator.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <spdlog/spdlog.h>

#include "tasksph/config.hpp"
#include "tasksph/device_sim.hpp"
#include "tasksph/driver.hpp"
#include "tasksph/gresho.hpp"
#include "tasksph/offload.hpp"

namespace py = pybind11;
using namespace tasksph;

namespace {

py::array_t<float> vec_array(const std::vector<Vec3f>& v) {
  py::array_t<float> a({py::ssize_t(v.size()), py::ssize_t(3)});
  auto m = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int k = 0; k < 3; ++k) m(py::ssize_t(i), k) = v[i][k];
  return a;
}

template <class T>
py::array_t<T> scalar_array(const std::vector<T>& v) {
  return py::array_t<T>(py::ssize_t(v.size()), v.data());
}

std::string setting_text(const py::handle& value) {
  if (py::isinstance<py::bool_>(value)) return value.cast<bool>() ? "true" : "false";
  return py::str(value).cast<std::string>();
}

py::dict step_dict(const StepRecord& s) {
  py::dict d;
  d["step"] = s.step;
  d["time"] = s.time;
  d["dt"] = s.dt;
  d["tasks"] = s.tasks;
  d["wall_ns"] = s.wall_ns;
  d["initial_task_management_ns"] = s.initial_task_management_ns;
  d["outside_task_ns"] = s.outside_task_ns;
  d["max_newton_iterations"] = s.max_newton_iterations;
  d["h_closure_max"] = s.h_closure_max;
  d["h_closure_fraction"] = s.h_closure_fraction;
  d["mass"] = s.mass;
  d["momentum_force"] = s.momentum_force;
  d["abs_force"] = s.abs_force;
  return d;
}

py::dict timeline_dict(const SimTimeline& tl) {
  py::dict d;
  d["makespan"] = tl.makespan;
  d["overlap"] = tl.overlap;
  d["busy_h2d"] = tl.busy_h2d;
  d["busy_d2h"] = tl.busy_d2h;
  d["busy_kernel"] = tl.busy_kernel;
  d["ops"] = tl.ops.size();
  return d;
}

DeviceModel model_from(const std::string& spec) {
  constexpr std::string_view prefix = "custom ";
  if (spec.rfind(prefix, 0) == 0) return load_device_model(spec.substr(prefix.size()));
  return device_preset(spec);
}

}  // namespace

PYBIND11_MODULE(_tasksph, m) {
  m.doc() = "Task-parallel SPH solver on the Gresho-Chan vortex";
  spdlog::set_level(spdlog::level::warn);

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<InvariantError>(m, "InvariantError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());

  m.def(
      "kernel",
      [](double r, double h, double gamma_k) {
        const auto s = kernel_sample(r, h, gamma_k);
        return py::make_tuple(s.W, s.dW_dr, s.dW_dh);
      },
      py::arg("r"), py::arg("h"), py::arg("gamma_k") = 2.0, "(W, dW/dr, dW/dh) of the M4 kernel");

  m.def(
      "analytic",
      [](double r) {
        const auto p = analytic_eval(r);
        return py::make_tuple(p.v_theta, p.p);
      },
      py::arg("r"), "exact (v_theta, P) of the vortex at radius r");

  m.def(
      "device_sizing",
      [](std::uint64_t n_p, std::uint64_t s_p, std::uint64_t n_c) {
        const auto s = device_sizing(n_p, s_p, n_c);
        return py::make_tuple(s.n_offload, s.m_t);
      },
      py::arg("n_particles"), py::arg("pack_size"), py::arg("cells"), "(N_offload, bytes per host thread)");

  m.def("config_keys", &config_keys);

  m.def(
      "run",
      [](const std::string& config, const py::kwargs& settings) {
        ConfigOverrides overrides;
        for (const auto& [k, v] : settings) overrides.emplace_back(py::str(k).cast<std::string>(), setting_text(v));
        const RunConfig cfg = parse_config(config, overrides);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_simulation(cfg);
        }
        py::dict out;
        out["time"] = r.time;
        out["top_grid"] = r.top_grid;
        py::dict report;
        report["l1_v"] = r.report.l1_v;
        report["l1_p"] = r.report.l1_p;
        report["plateau_p"] = r.report.plateau_p;
        report["plateau_rel"] = r.report.plateau_rel;
        out["report"] = report;
        py::list steps;
        for (const auto& s : r.steps) steps.append(step_dict(s));
        out["steps"] = steps;
        const ParticleSystem& ps = r.particles;
        out["id"] = scalar_array(ps.id);
        out["x"] = vec_array(ps.x);
        out["v"] = vec_array(ps.v);
        out["rho"] = scalar_array(ps.rho);
        out["h"] = scalar_array(ps.h);
        out["u"] = scalar_array(ps.u);
        out["P"] = scalar_array(ps.P);
        if (r.sim) out["device"] = timeline_dict(*r.sim);
        return out;
      },
      py::arg("config") = "",
      "Run to the end time. Keyword arguments are config keys, e.g. run(resolution=16, t_end=0.01).");

  m.def(
      "simulate_trace",
      [](const std::string& path, const std::string& model) {
        return timeline_dict(simulate(read_device_trace(path), model_from(model)));
      },
      py::arg("path"), py::arg("model") = "nvlink-like", "Replay a device trace CSV on a device model");
}
