#include "tasksph/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

namespace tasksph {

const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::cpu: return "cpu";
    case RunMode::offload_host: return "offload-host";
    case RunMode::offload_trace: return "offload-trace";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s);

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
};

long long to_int(const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw std::invalid_argument("integer expected");
  return out;
}

double to_real(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument("number expected");
  return d;
}

bool to_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("boolean expected");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    auto real = [&](std::string k, std::function<double&(RunConfig&)> ref) {
      v.push_back({std::move(k), [ref](RunConfig& c, const std::string& s) { ref(c) = to_real(s); }});
    };
    auto integer = [&](std::string k, std::function<int&(RunConfig&)> ref) {
      v.push_back({std::move(k), [ref](RunConfig& c, const std::string& s) { ref(c) = int(to_int(s)); }});
    };
    auto text = [&](std::string k, std::function<std::string&(RunConfig&)> ref) {
      v.push_back({std::move(k), [ref](RunConfig& c, const std::string& s) { ref(c) = s; }});
    };
    integer("resolution", [](RunConfig& c) -> int& { return c.ic.resolution; });
    real("box", [](RunConfig& c) -> double& { return c.ic.box; });
    real("rho0", [](RunConfig& c) -> double& { return c.ic.rho0; });
    real("gamma", [](RunConfig& c) -> double& { return c.physics.gamma; });
    real("t_end", [](RunConfig& c) -> double& { return c.t_end; });
    integer("max_steps", [](RunConfig& c) -> int& { return c.max_steps; });
    v.push_back({"mode", [](RunConfig& c, const std::string& s) {
                   if (s == "cpu") c.mode = RunMode::cpu;
                   else if (s == "offload-host") c.mode = RunMode::offload_host;
                   else if (s == "offload-trace") c.mode = RunMode::offload_trace;
                   else throw std::invalid_argument("expected cpu, offload-host or offload-trace");
                 }});
    integer("workers", [](RunConfig& c) -> int& { return c.workers; });
    integer("device_threads", [](RunConfig& c) -> int& { return c.device_threads; });
    integer("sp_self", [](RunConfig& c) -> int& { return c.offload.sp_self; });
    integer("sb_self", [](RunConfig& c) -> int& { return c.offload.sb_self; });
    integer("sp_pair", [](RunConfig& c) -> int& { return c.offload.sp_pair; });
    integer("sb_pair", [](RunConfig& c) -> int& { return c.offload.sb_pair; });
    integer("stream_pool", [](RunConfig& c) -> int& { return c.offload.stream_pool; });
    integer("top_grid", [](RunConfig& c) -> int& { return c.top_grid; });
    integer("split_threshold", [](RunConfig& c) -> int& { return c.split_threshold; });
    integer("rebuild_every", [](RunConfig& c) -> int& { return c.rebuild_every; });
    real("rebuild_displacement", [](RunConfig& c) -> double& { return c.rebuild_displacement; });
    real("plan_h_factor", [](RunConfig& c) -> double& { return c.plan_h_factor; });
    v.push_back({"use_sorts", [](RunConfig& c, const std::string& s) { c.use_sorts = to_bool(s); }});
    real("eta", [](RunConfig& c) -> double& { return c.physics.kernel.eta; });
    real("gamma_k", [](RunConfig& c) -> double& { return c.physics.kernel.gamma_k; });
    real("beta", [](RunConfig& c) -> double& { return c.beta; });
    real("alpha_v_max", [](RunConfig& c) -> double& { return c.physics.visc.alpha_max; });
    real("alpha_v_init", [](RunConfig& c) -> double& { return c.physics.visc.alpha_init; });
    real("viscosity_decay_length", [](RunConfig& c) -> double& { return c.physics.visc.decay_length; });
    real("alpha_c_max", [](RunConfig& c) -> double& { return c.physics.cond.alpha_max; });
    real("alpha_c_min", [](RunConfig& c) -> double& { return c.physics.cond.alpha_min; });
    real("beta_c", [](RunConfig& c) -> double& { return c.physics.cond.beta_c; });
    real("c_cfl", [](RunConfig& c) -> double& { return c.physics.c_cfl; });
    real("h_tolerance", [](RunConfig& c) -> double& { return c.physics.hsolve.tolerance; });
    integer("h_max_iterations", [](RunConfig& c) -> int& { return c.physics.hsolve.max_iterations; });
    real("jitter", [](RunConfig& c) -> double& { return c.ic.jitter; });
    v.push_back({"seed", [](RunConfig& c, const std::string& s) {
                   const long long x = to_int(s);
                   if (x < 0) throw std::invalid_argument("seed must be non-negative");
                   c.ic.seed = std::uint64_t(x);
                 }});
    text("snapshot_out", [](RunConfig& c) -> std::string& { return c.snapshot_out; });
    text("timeline_out", [](RunConfig& c) -> std::string& { return c.timeline_out; });
    text("trace_out", [](RunConfig& c) -> std::string& { return c.trace_out; });
    text("report_out", [](RunConfig& c) -> std::string& { return c.report_out; });
    v.push_back({"device_model", [](RunConfig& c, const std::string& s) {
                   // a preset name, or "custom PATH"
                   const bool file = s.rfind("custom ", 0) == 0;
                   c.device_model = file ? trim(s.substr(7)) : s;
                   c.device_model_is_file = file;
                 }});
    v.push_back({"device_model_file", [](RunConfig& c, const std::string& s) {
                   c.device_model = s;
                   c.device_model_is_file = true;
                 }});
    return v;
  }();
  return f;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

void apply(RunConfig& c, const std::string& key, const std::string& value, const std::string& where) {
  const auto& f = fields();
  const auto it = std::find_if(f.begin(), f.end(), [&](const Field& x) { return x.key == key; });
  if (it == f.end()) throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
  try {
    it->set(c, value);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("{}: bad value '{}' for key '{}' ({})", where, value, key, e.what()));
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (ic.resolution < 8) fail(fmt::format("resolution must be at least 8 (got {})", ic.resolution));
  if (!(ic.box > 0.0)) fail("box must be positive");
  if (!(ic.rho0 > 0.0)) fail("rho0 must be positive");
  if (!(physics.gamma > 1.0)) fail("gamma must exceed 1");
  if (!(t_end >= 0.0)) fail("t_end must be non-negative");
  if (max_steps < 0) fail("max_steps must be non-negative");
  if (workers < 1) fail("workers must be at least 1");
  if (device_threads < 1) fail("device_threads must be at least 1");
  if (ic.jitter < 0.0 || ic.jitter >= 1.0) fail("jitter must lie in [0, 1)");
  const int g = resolved_top_grid();
  if (g == 2) fail("top_grid = 2 makes opposite neighbours coincide; use 1 or at least 3");
  if (g < 1) fail("top_grid must be positive");
  if (split_threshold < 1) fail("split_threshold must be positive");
  if (rebuild_every < 1) fail("rebuild_every must be at least 1");
  if (!(rebuild_displacement > 0.0)) fail("rebuild_displacement must be positive");
  if (!(plan_h_factor >= 1.0)) fail("plan_h_factor must be at least 1");
  if (!(physics.kernel.gamma_k > 0.0)) fail("gamma_k must be positive");
  if (!(physics.kernel.eta > 0.0)) fail("eta must be positive");
  if (!(physics.c_cfl > 0.0)) fail("c_cfl must be positive");
  if (!(physics.hsolve.tolerance > 0.0)) fail("h_tolerance must be positive");
  if (physics.hsolve.max_iterations < 1) fail("h_max_iterations must be at least 1");
  for (bool pair : {false, true}) {
    const char* sp_key = pair ? "sp_pair" : "sp_self";
    const char* sb_key = pair ? "sb_pair" : "sb_self";
    const int sp = offload.sp(pair), sb = offload.sb(pair);
    if (sp < 1) fail(fmt::format("{} must be at least 1", sp_key));
    if (sb < 1) fail(fmt::format("{} must be at least 1", sb_key));
    if (sb > sp) fail(fmt::format("{} = {} exceeds {} = {}", sb_key, sb, sp_key, sp));
  }
  if (offload.stream_pool < 0) fail("stream_pool must be non-negative");
  if (mode == RunMode::cpu && !trace_out.empty()) fail("trace_out needs mode offload-host or offload-trace");
  if (device_model_is_file && !std::filesystem::exists(device_model))
    fail(fmt::format("device model file '{}' not found", device_model));
  if (mode != RunMode::offload_trace && !device_model.empty()) fail("device_model needs mode offload-trace");
}

RunConfig parse_config(const std::string& path, const ConfigOverrides& overrides) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
      line = trim(line);
      if (line.empty()) continue;
      const std::string where = fmt::format("{}:{}", path, lineno);
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(fmt::format("{}: expected 'key = value'", where));
      apply(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
    }
  }
  for (const auto& [k, v] : overrides) apply(c, k, v, fmt::format("option '{}'", k));
  c.ic.gamma = c.physics.gamma;
  c.ic.eta = c.physics.kernel.eta;
  c.validate();
  return c;
}

}  // namespace tasksph
