#include "tasksph/ghost.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tasksph {

std::vector<NeighbourImage> neighbour_images(const CellTree& tree, int top) {
  std::vector<NeighbourImage> out;
  const Cell& c = tree.cells[top];
  const double L = tree.box;
  const double eps = 1e-9 * L;
  for (int t = 0; t < tree.num_top(); ++t) {
    const Cell& other = tree.cells[t];
    for (int sx = -1; sx <= 1; ++sx)
      for (int sy = -1; sy <= 1; ++sy)
        for (int sz = -1; sz <= 1; ++sz) {
          const Vec3d s{sx * L, sy * L, sz * L};
          const Vec3d delta = other.center() + s - c.center();
          bool near = true;
          for (int k = 0; k < 3; ++k)
            if (std::abs(delta[k]) - 0.5 * (c.width + other.width) > eps) near = false;
          if (near) out.push_back({t, s.as<float>()});
        }
  }
  return out;
}

namespace {

void walk_density(const ParticleSystem& ps, const CellTree& tree, int c, const Vec3f& shift, const DensityInput& pi,
                  std::int32_t i, double gamma_k, DensitySums& s, std::int64_t& coincident) {
  const Cell& cell = tree.cells[c];
  if (cell.count == 0) return;
  const double H = gamma_k * pi.h;
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = cell.lo[k] + shift[k] - cell.dx_max;
    const double hi = cell.lo[k] + shift[k] + cell.width + cell.dx_max;
    const double xk = pi.x[k];
    if (xk < lo) d2 += (lo - xk) * (lo - xk);
    else if (xk > hi) d2 += (xk - hi) * (xk - hi);
  }
  if (d2 >= H * H) return;
  if (cell.split()) {
    for (int o = 0; o < 8; ++o) walk_density(ps, tree, cell.first_daughter + o, shift, pi, i, gamma_k, s, coincident);
    return;
  }
  const Vec3d centre = cell.center();
  const bool zero_shift = shift.x == 0.0f && shift.y == 0.0f && shift.z == 0.0f;
  for (std::int32_t j = cell.first; j < cell.first + cell.count; ++j) {
    if (j == i && zero_shift) continue;
    density_term(pi, load_density(ps, j, cell_position(ps, j, centre, shift)), gamma_k, s, coincident);
  }
}

}  // namespace

DensitySums gather_density(const ParticleSystem& ps, const CellTree& tree, const std::vector<NeighbourImage>& images,
                           std::int32_t i, double h, double gamma_k, std::int64_t& coincident) {
  // position of i seen from its own top-level cell
  int own = -1;
  for (const auto& im : images)
    if (im.shift == Vec3f{} && tree.cells[im.top].first <= i && i < tree.cells[im.top].first + tree.cells[im.top].count)
      own = im.top;
  if (own < 0) throw UsageError("gather_density: particle is not inside the neighbour set");
  DensityInput pi = load_density(ps, i, cell_position(ps, i, tree.cells[own].center(), {}));
  pi.h = h;
  DensitySums s;
  density_self_term(pi, gamma_k, s);
  for (const auto& im : images) walk_density(ps, tree, im.top, im.shift, pi, i, gamma_k, s, coincident);
  return s;
}

void ghost_density(ParticleSystem& ps, CellTree& tree, int top, const GhostParams& p, GhostStats* stats) {
  const Cell& cell = tree.cells[top];
  if (cell.count == 0) return;
  const auto images = neighbour_images(tree, top);
  const double gamma_k = p.kernel.gamma_k;
  const double eta3 = p.kernel.eta * p.kernel.eta * p.kernel.eta;
  const double tol = p.hsolve.tolerance;
  const double h_cap = (cell.width - 2.0 * cell.dx_max) / gamma_k;
  std::int64_t coincident = 0;
  std::int64_t total_iterations = 0;
  std::int64_t worst = 0;
  std::int64_t bisections = 0;

  for (std::int32_t i = cell.first; i < cell.first + cell.count; ++i) {
    double h = ps.h[i];
    DensitySums s;
    s.rho = ps.acc_rho[i];
    s.drho_dh = ps.acc_drho_dh[i];
    s.wcount = ps.acc_wcount[i];
    s.dwcount_dh = ps.acc_dwcount_dh[i];
    s.div = ps.acc_div[i];
    s.curl = ps.acc_curl[i];

    std::vector<double> history{h};
    auto eval = [&](double hh) {
      s = gather_density(ps, tree, images, i, hh, gamma_k, coincident);
      history.push_back(hh);
      return s.wcount * hh * hh * hh - eta3;
    };
    // judged on the rounded value that gets stored, so the stored state meets the tolerance
    auto done = [&] {
      const double w = float(s.wcount);
      return std::abs(w * h * h * h - eta3) / eta3 <= tol;
    };

    double g = s.wcount * h * h * h - eta3;
    int iterations = 0;
    bool newton_failed = false;
    while (!done()) {
      if (iterations >= p.hsolve.max_iterations) {
        newton_failed = true;
        break;
      }
      const double dg = s.dwcount_dh * h * h * h + 3.0 * s.wcount * h * h;
      double h_new = dg > 0.0 ? h - g / dg : std::numeric_limits<double>::quiet_NaN();
      if (!(h_new > 0.5 * h && h_new < 2.0 * h)) {
        newton_failed = true;
        break;
      }
      if (h_new > h_cap) {
        if (h >= h_cap) {
          newton_failed = true;
          break;
        }
        h_new = h_cap;
      }
      h = double(float(h_new));
      g = eval(h);
      ++iterations;
    }

    if (newton_failed && !done()) {
      auto fail = [&](const char* why) {
        std::string hist;
        for (double v : history) hist += fmt::format(" {:.6g}", v);
        throw NumericalError(
            fmt::format("h-solve failed for particle {} ({}); h history:{}", ps.id[i], why, hist));
      };
      const double f = p.hsolve.bracket_factor;
      double lo = double(float(std::min(h, double(ps.h[i])) / f));
      double hi = double(float(std::min(std::max(h, double(ps.h[i])) * f, h_cap)));
      double g_lo = eval(lo);
      for (int k = 0; g_lo > 0.0; ++k) {
        if (k > 60) fail("no lower bracket");
        lo = double(float(lo / f));
        g_lo = eval(lo);
      }
      double g_hi = eval(hi);
      while (g_hi < 0.0) {
        if (hi >= h_cap) fail("neighbour target unreachable within the cell size");
        hi = double(float(std::min(hi * f, h_cap)));
        g_hi = eval(hi);
      }
      h = hi;
      g = g_hi;
      int k = 0;
      while (!done()) {
        if (++k > p.hsolve.max_bisections) fail("bisection did not converge");
        const double mid = double(float(0.5 * (lo + hi)));
        if (mid <= lo || mid >= hi) fail("bracket collapsed");
        const double g_mid = eval(mid);
        if (g_mid < 0.0) lo = mid;
        else hi = mid;
        h = mid;
        g = g_mid;
      }
      bisections += k;
      iterations += k;
    }
    total_iterations += iterations;
    worst = std::max<std::int64_t>(worst, iterations);

    ps.h[i] = float(h);
    const double rho = s.rho;
    ps.rho[i] = float(rho);
    ps.wcount[i] = float(s.wcount);
    ps.dwcount_dh[i] = float(s.dwcount_dh);
    ps.drho_dh[i] = float(s.drho_dh);
    ps.f[i] = float(1.0 + h / (3.0 * rho) * s.drho_dh);
    const double div = s.div / rho;
    const Vec3d curl = s.curl * (1.0 / rho);
    ps.div_v[i] = float(div);
    ps.curl_v[i] = curl.as<float>();
    const EosState eos = eos_update(rho, ps.u[i], p.gamma);
    ps.P[i] = float(eos.P);
    ps.cs[i] = float(eos.cs);
    const double adiv = std::abs(div);
    ps.balsara[i] = float(adiv / (adiv + norm(curl) + 1e-4 * eos.cs / h));
  }
  tree.update_h_max(ps, top);
  ps.clear_gradient_acc(cell.first, cell.first + cell.count);

  if (stats) {
    stats->newton_iterations += total_iterations;
    stats->bisections += bisections;
    stats->coincident += coincident;
    std::int64_t prev = stats->max_particle_iterations.load();
    while (worst > prev && !stats->max_particle_iterations.compare_exchange_weak(prev, worst)) {
    }
  }
}

void ghost_gradient(ParticleSystem& ps, std::int32_t first, std::int32_t last, double dt, const GhostParams& p) {
  if (!(dt > 0.0)) throw UsageError(fmt::format("ghost_gradient: time step must be positive, got {}", dt));
  const auto& vp = p.visc;
  const auto& cp = p.cond;
  for (std::int32_t i = first; i < last; ++i) {
    const double vsig = ps.acc_vsig[i];
    const double lap = ps.acc_lap_u[i];
    ps.v_sig[i] = float(vsig);
    ps.lap_u[i] = float(lap);
    const double H = p.kernel.gamma_k * ps.h[i];
    const double cs = ps.cs[i];
    const double div = ps.div_v[i];
    const double prev = ps.div_v_prev[i];
    const double div_dot = std::isnan(prev) ? 0.0 : (div - prev) / dt;
    const double S = H * H * std::max(0.0, -div_dot);
    const double denom = vsig * vsig + S;
    const double alpha_loc = denom > 0.0 ? vp.alpha_max * S / denom : 0.0;

    double alpha = ps.alpha_v[i];
    if (alpha < alpha_loc) alpha = alpha_loc;
    else alpha = alpha_loc + (alpha - alpha_loc) * std::exp(-vp.decay_length * cs * dt / H);
    alpha = std::clamp(alpha, 0.0, vp.alpha_max);
    ps.alpha_v[i] = float(alpha);

    const double u = ps.u[i];
    double ac = ps.alpha_c[i];
    double rate = -(ac - cp.alpha_min) * vsig / H;
    if (u > 0.0) rate += cp.beta_c * H * lap * ac / std::sqrt(u);
    ac += dt * rate;
    const double ceiling = cp.alpha_max * (1.0 - alpha / vp.alpha_max);
    ac = std::max(std::min(ac, ceiling), cp.alpha_min);
    ps.alpha_c[i] = float(ac);

    ps.div_v_prev[i] = float(div);
  }
  ps.clear_force_acc(first, last);
}

void store_gradient_state(ParticleSystem& ps, std::int32_t first, std::int32_t last) {
  for (std::int32_t i = first; i < last; ++i) {
    ps.v_sig[i] = ps.acc_vsig[i];
    ps.lap_u[i] = float(ps.acc_lap_u[i]);
    ps.div_v_prev[i] = ps.div_v[i];
  }
  ps.clear_force_acc(first, last);
}

void finalize_force(ParticleSystem& ps, std::int32_t first, std::int32_t last) {
  for (std::int32_t i = first; i < last; ++i) {
    ps.a[i] = ps.acc_a[i].as<float>();
    ps.u_dt[i] = float(ps.acc_u_dt[i]);
    ps.h_dt[i] = float(-double(ps.h[i]) / (3.0 * ps.rho[i]) * ps.acc_h_dt[i]);
    ps.v_sig[i] = ps.acc_vsig[i];
  }
}

std::int64_t kick(ParticleSystem& ps, std::int32_t first, std::int32_t last, double dt_half, double gamma) {
  std::int64_t clamped = 0;
  for (std::int32_t i = first; i < last; ++i) {
    for (int k = 0; k < 3; ++k) ps.v[i][k] = float(double(ps.v[i][k]) + double(ps.a[i][k]) * dt_half);
    double u = double(ps.u[i]) + double(ps.u_dt[i]) * dt_half;
    if (u < 0.0) {
      u = 0.0;
      ++clamped;
    }
    ps.u[i] = float(u);
    if (ps.rho[i] > 0.0f) {
      const EosState eos = eos_update(ps.rho[i], u, gamma);
      ps.P[i] = float(eos.P);
      ps.cs[i] = float(eos.cs);
    }
  }
  return clamped;
}

double timestep_range(const ParticleSystem& ps, std::int32_t first, std::int32_t last, double gamma_k, double c_cfl) {
  double dt = std::numeric_limits<double>::infinity();
  for (std::int32_t i = first; i < last; ++i) {
    const double vs = ps.v_sig[i];
    if (!std::isfinite(vs)) throw NumericalError(fmt::format("timestep: non-finite signal velocity for particle {}", ps.id[i]));
    if (vs <= 0.0) continue;
    dt = std::min(dt, c_cfl * 2.0 * gamma_k * double(ps.h[i]) / vs);
  }
  return dt;
}

double compute_timestep(const ParticleSystem& ps, double gamma_k, double c_cfl) {
  return timestep_range(ps, 0, std::int32_t(ps.size()), gamma_k, c_cfl);
}

void init_switches(ParticleSystem& ps, const GhostParams& p) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ps.alpha_v[i] = float(p.visc.alpha_init);
    ps.alpha_c[i] = float(p.cond.alpha_init);
    ps.div_v_prev[i] = std::numeric_limits<float>::quiet_NaN();
    ps.f[i] = 1.0f;
    ps.balsara[i] = 1.0f;
  }
}

}  // namespace tasksph
