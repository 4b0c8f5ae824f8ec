// Small particle configurations and helpers shared by tests.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "tasksph/cell_tree.hpp"
#include "tasksph/offload.hpp"
#include "tasksph/particles.hpp"
#include "tasksph/sph_loops.hpp"

namespace fixtures {

using namespace tasksph;

struct CellSystem {
  ParticleSystem ps;
  CellTree tree;
};

// Random particles in the listed top cells of a g^3 grid in the unit box, with
// random physical fields. h is kept below the cell width over gamma_k.
inline CellSystem random_cells(std::uint64_t seed, int g, const std::vector<std::pair<int, int>>& cell_counts,
                               double h_lo = 0.04, double h_hi = 0.11) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::size_t n = 0;
  for (auto [c, k] : cell_counts) n += std::size_t(k);
  CellSystem s;
  s.ps.resize(n);
  s.ps.box = 1.0;
  const double w = 1.0 / g;
  std::size_t i = 0;
  for (auto [c, k] : cell_counts) {
    const int ix = c / (g * g), iy = (c / g) % g, iz = c % g;
    for (int q = 0; q < k; ++q, ++i) {
      s.ps.id[i] = std::int64_t(i);
      s.ps.x[i] = {float((ix + 0.02 + 0.96 * U(rng)) * w), float((iy + 0.02 + 0.96 * U(rng)) * w),
                   float((iz + 0.02 + 0.96 * U(rng)) * w)};
      s.ps.v[i] = {float(U(rng) - 0.5), float(U(rng) - 0.5), float(U(rng) - 0.5)};
      s.ps.m[i] = float(0.5 + U(rng));
      s.ps.h[i] = float(h_lo + (h_hi - h_lo) * U(rng));
      s.ps.rho[i] = float(0.5 + 1.5 * U(rng));
      s.ps.u[i] = float(1.0 + 2.0 * U(rng));
      s.ps.P[i] = float(2.0 / 3.0 * s.ps.rho[i] * s.ps.u[i]);
      s.ps.cs[i] = float(std::sqrt(5.0 / 3.0 * s.ps.P[i] / s.ps.rho[i]));
      s.ps.f[i] = float(0.8 + 0.4 * U(rng));
      s.ps.alpha_v[i] = float(2.0 * U(rng));
      s.ps.balsara[i] = float(U(rng));
      s.ps.alpha_c[i] = float(U(rng));
      s.ps.x_build[i] = s.ps.x[i];
    }
  }
  s.tree = build_tree(s.ps, g, 100000, 2.0);
  return s;
}

inline std::vector<std::size_t> members(const CellTree& t, int c) {
  std::vector<std::size_t> out;
  for (int i = t.cells[c].first; i < t.cells[c].first + t.cells[c].count; ++i) out.push_back(std::size_t(i));
  return out;
}

inline void clear_all(ParticleSystem& ps) {
  ps.clear_density_acc(0, ps.size());
  ps.clear_gradient_acc(0, ps.size());
  ps.clear_force_acc(0, ps.size());
}

// Self and neighbour-pair visits covering every top cell once.
inline std::vector<Visit> all_visits(const CellTree& t) {
  std::vector<Visit> out;
  const int g = t.top_grid;
  for (int c = 0; c < t.num_top(); ++c) {
    enumerate_self(t, c, out);
    if (g == 1) continue;
    const auto cc = t.top_coords(c);
    for (const auto& o : pair_axis_offsets()) {
      Vec3<int> nb{cc.x + o.x, cc.y + o.y, cc.z + o.z};
      Vec3f shift;
      for (int k = 0; k < 3; ++k) {
        if (nb[k] >= g) { nb[k] -= g; shift[k] = float(t.box); }
        if (nb[k] < 0) { nb[k] += g; shift[k] = -float(t.box); }
      }
      enumerate_pair(t, c, t.top_index(nb.x, nb.y, nb.z), shift, out);
    }
  }
  return out;
}

// Jittered n^3 lattice with random velocities on a g^3 grid. Coordinates are
// snapped to multiples of 2^-23 so that periodic images translate exactly.
inline float snap(double x) { return wrap_coord(float(std::round(x * 8388608.0) / 8388608.0), 1.0f); }

inline CellSystem lattice_system(int n, int g, std::uint64_t seed, double jitter = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-0.5, 0.5);
  CellSystem s;
  const std::size_t np = std::size_t(n) * n * n;
  s.ps.resize(np);
  s.ps.box = 1.0;
  const double dx = 1.0 / n;
  std::size_t i = 0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c, ++i) {
        s.ps.id[i] = std::int64_t(i);
        s.ps.x[i] = {snap((a + 0.5 + jitter * U(rng)) * dx), snap((b + 0.5 + jitter * U(rng)) * dx),
                     snap((c + 0.5 + jitter * U(rng)) * dx)};
        s.ps.v[i] = {float(U(rng)), float(U(rng)), float(U(rng))};
        s.ps.m[i] = float(1.0 / double(np));
        s.ps.h[i] = float(1.2348 * dx * (1.0 + 0.1 * U(rng)));
        s.ps.rho[i] = float(1.0 + 0.2 * U(rng));
        s.ps.u[i] = float(1.5 + U(rng));
        s.ps.P[i] = float(2.0 / 3.0 * s.ps.rho[i] * s.ps.u[i]);
        s.ps.cs[i] = float(std::sqrt(5.0 / 3.0 * s.ps.P[i] / s.ps.rho[i]));
        s.ps.f[i] = float(1.0 + 0.1 * U(rng));
        s.ps.alpha_v[i] = float(1.0 + U(rng));
        s.ps.balsara[i] = float(0.5 + U(rng));
        s.ps.alpha_c[i] = float(0.5 + U(rng));
        s.ps.x_build[i] = s.ps.x[i];
      }
  s.tree = build_tree(s.ps, g, 100000, 2.0);
  return s;
}

// Run one loop over every visit of the tree from cleared accumulators.
inline void run_all(LoopKind loop, CellSystem& s, bool sorts, const SphParams& p = {}) {
  clear_all(s.ps);
  if (sorts)
    for (int t = 0; t < s.tree.num_top(); ++t) s.tree.sort_subtree(s.ps, t);
  VisitOptions opt{p, sorts, nullptr};
  for (const Visit& v : all_visits(s.tree)) run_visit(loop, s.ps, s.tree, v, opt);
}

enum class Path { naive, sorted, records };

inline const char* to_string(Path p) {
  switch (p) {
    case Path::naive: return "naive";
    case Path::sorted: return "sorted";
    case Path::records: return "records";
  }
  return "?";
}

inline void run(LoopKind loop, CellSystem& s, const Visit& v, Path path, const SphParams& params = {}) {
  clear_all(s.ps);
  if (path == Path::records) {
    PackBuffer buf(loop, v.b >= 0, s.ps.size() * 2 + 8);
    pack_visit(buf, s.ps, s.tree, v, 0, -1, {}, params.gamma_k);
    run_records(buf, params);
    scatter_records(buf, s.ps, 0, buf.records());
    return;
  }
  if (path == Path::sorted) {
    for (int t = 0; t < s.tree.num_top(); ++t) s.tree.sort_subtree(s.ps, t);
  }
  VisitOptions opt{params, path == Path::sorted, nullptr};
  run_visit(loop, s.ps, s.tree, v, opt);
}

// Worst relative deviation (in units of the 1e-6 budget; <= 1 passes) of the
// accumulators after `run` against the brute-force oracle.
inline double deviation(LoopKind loop, const CellSystem& s, const Visit& v, double beta = 3.0) {
  std::vector<oracle::P> all;
  for (std::size_t i = 0; i < s.ps.size(); ++i) all.push_back(oracle::load(s.ps, i));
  const auto A = members(s.tree, v.a);
  const auto B = v.b >= 0 ? members(s.tree, v.b) : std::vector<std::size_t>{};
  constexpr double tol = 1e-6;
  double worst = 0.0;
  auto rel = [&](double got, const oracle::Acc& ref) {
    const double sc = std::max(std::abs(ref.v), 0.1 * ref.scale);
    if (sc == 0.0) return got == 0.0 ? 0.0 : 1e30;
    return std::abs(got - ref.v) / sc / tol;
  };
  auto rel_max = [&](double got, double ref) {
    if (ref == 0.0) return got == 0.0 ? 0.0 : 1e30;
    return std::abs(got - ref) / std::abs(ref) / tol;
  };
  auto check = [&](std::size_t i, const std::vector<std::size_t>& js, bool self) {
    switch (loop) {
      case LoopKind::density: {
        const auto o = oracle::density(all, i, js, self, 1.0);
        worst = std::max({worst, rel(s.ps.acc_rho[i], o.rho), rel(s.ps.acc_drho_dh[i], o.drho_dh),
                          rel(s.ps.acc_wcount[i], o.wcount), rel(s.ps.acc_dwcount_dh[i], o.dwcount_dh),
                          rel(s.ps.acc_div[i], o.div)});
        for (int k = 0; k < 3; ++k) worst = std::max(worst, rel(s.ps.acc_curl[i][k], o.curl[k]));
        break;
      }
      case LoopKind::gradient: {
        const auto o = oracle::gradient(all, i, js, 1.0, beta);
        worst = std::max({worst, rel_max(s.ps.acc_vsig[i], o.vsig), rel(s.ps.acc_lap_u[i], o.lap_u)});
        break;
      }
      case LoopKind::force: {
        const auto o = oracle::force(all, i, js, 1.0, beta);
        worst = std::max({worst, rel_max(s.ps.acc_vsig[i], o.vsig), rel(s.ps.acc_u_dt[i], o.u_dt),
                          rel(s.ps.acc_h_dt[i], o.h_dt)});
        for (int k = 0; k < 3; ++k) {
          oracle::Acc ak = o.a[k];
          worst = std::max(worst, rel(s.ps.acc_a[i][k], ak));
        }
        break;
      }
    }
  };
  if (v.b < 0) {
    for (std::size_t i : A) check(i, A, true);
  } else {
    for (std::size_t i : A) check(i, B, false);
    for (std::size_t i : B) check(i, A, false);
  }
  return worst;
}

}  // namespace fixtures
