#include "tasksph/sph_loops.hpp"

#include <algorithm>

namespace tasksph {

DensityInput load_density(const ParticleSystem& ps, std::int32_t i, const Vec3f& x) {
  return {x.as<double>(), double(ps.h[i]), ps.v[i].as<double>(), double(ps.m[i])};
}

GradientInput load_gradient(const ParticleSystem& ps, std::int32_t i, const Vec3f& x) {
  return {x.as<double>(), double(ps.h[i]),  ps.v[i].as<double>(), double(ps.rho[i]),
          double(ps.P[i]), double(ps.cs[i]), double(ps.u[i]),      double(ps.m[i])};
}

ForceInput load_force(const ParticleSystem& ps, std::int32_t i, const Vec3f& x) {
  return {x.as<double>(),        double(ps.h[i]),       ps.v[i].as<double>(), double(ps.m[i]),
          double(ps.rho[i]),     double(ps.P[i]),       double(ps.cs[i]),     double(ps.u[i]),
          double(ps.f[i]),       double(ps.alpha_v[i]), double(ps.balsara[i]), double(ps.alpha_c[i])};
}

static inline double r32(double v) { return double(float(v)); }

void commit_density(ParticleSystem& ps, std::int32_t i, const DensitySums& s) {
  ps.acc_rho[i] += r32(s.rho);
  ps.acc_drho_dh[i] += r32(s.drho_dh);
  ps.acc_wcount[i] += r32(s.wcount);
  ps.acc_dwcount_dh[i] += r32(s.dwcount_dh);
  ps.acc_div[i] += r32(s.div);
  // per component: gcc 11 -O3 vectorises the braced form and drops the rounding
  for (int k = 0; k < 3; ++k) ps.acc_curl[i][k] += r32(s.curl[k]);
}

void commit_gradient(ParticleSystem& ps, std::int32_t i, const GradientSums& s) {
  ps.acc_vsig[i] = std::max(ps.acc_vsig[i], float(s.vsig));
  ps.acc_lap_u[i] += r32(s.lap_u);
}

void commit_force(ParticleSystem& ps, std::int32_t i, const ForceSums& s) {
  for (int k = 0; k < 3; ++k) ps.acc_a[i][k] += r32(s.a[k]);
  ps.acc_u_dt[i] += r32(s.u_dt);
  ps.acc_h_dt[i] += r32(s.h_dt);
  ps.acc_vsig[i] = std::max(ps.acc_vsig[i], float(s.vsig));
}

namespace {

template <LoopKind L>
struct Traits;

template <>
struct Traits<LoopKind::density> {
  using Input = DensityInput;
  using Sums = DensitySums;
  using Send = SendDensity;
  using Recv = RecvDensity;
  static Input load(const ParticleSystem& ps, std::int32_t i, const Vec3f& x) { return load_density(ps, i, x); }
  static void self(const Input& pi, const SphParams& p, Sums& s) { density_self_term(pi, p.gamma_k, s); }
  static void term(const Input& pi, const Input& pj, const SphParams& p, Sums& s, std::int64_t& n) {
    density_term(pi, pj, p.gamma_k, s, n);
  }
  static void commit(ParticleSystem& ps, std::int32_t i, const Sums& s) { commit_density(ps, i, s); }
  static Input from_record(const Send& r) {
    return {{r.x_h.x, r.x_h.y, r.x_h.z}, r.x_h.w, {r.v_m.x, r.v_m.y, r.v_m.z}, r.v_m.w};
  }
  static Recv to_record(const Sums& s) {
    return {{float(s.rho), float(s.drho_dh), float(s.wcount), float(s.dwcount_dh)},
            {float(s.curl.x), float(s.curl.y), float(s.curl.z), float(s.div)}};
  }
};

template <>
struct Traits<LoopKind::gradient> {
  using Input = GradientInput;
  using Sums = GradientSums;
  using Send = SendGradient;
  using Recv = RecvGradient;
  static Input load(const ParticleSystem& ps, std::int32_t i, const Vec3f& x) { return load_gradient(ps, i, x); }
  static void self(const Input&, const SphParams&, Sums&) {}
  static void term(const Input& pi, const Input& pj, const SphParams& p, Sums& s, std::int64_t& n) {
    gradient_term(pi, pj, p, s, n);
  }
  static void commit(ParticleSystem& ps, std::int32_t i, const Sums& s) { commit_gradient(ps, i, s); }
  static Input from_record(const Send& r) {
    return {{r.x_h.x, r.x_h.y, r.x_h.z}, r.x_h.w,      {r.v_rho.x, r.v_rho.y, r.v_rho.z}, r.v_rho.w,
            r.P_cs_u_m.x,                r.P_cs_u_m.y, r.P_cs_u_m.z,                      r.P_cs_u_m.w};
  }
  static Recv to_record(const Sums& s) { return {{float(s.vsig), float(s.lap_u), 0.0f, 0.0f}}; }
};

template <>
struct Traits<LoopKind::force> {
  using Input = ForceInput;
  using Sums = ForceSums;
  using Send = SendForce;
  using Recv = RecvForce;
  static Input load(const ParticleSystem& ps, std::int32_t i, const Vec3f& x) { return load_force(ps, i, x); }
  static void self(const Input&, const SphParams&, Sums&) {}
  static void term(const Input& pi, const Input& pj, const SphParams& p, Sums& s, std::int64_t& n) {
    force_term(pi, pj, p, s, n);
  }
  static void commit(ParticleSystem& ps, std::int32_t i, const Sums& s) { commit_force(ps, i, s); }
  static Input from_record(const Send& r) {
    const auto& q = r.f_alphav_balsara_alphac;
    return {{r.x_h.x, r.x_h.y, r.x_h.z},
            r.x_h.w,
            {r.v_m.x, r.v_m.y, r.v_m.z},
            r.v_m.w,
            r.rho_P_cs_u.x,
            r.rho_P_cs_u.y,
            r.rho_P_cs_u.z,
            r.rho_P_cs_u.w,
            q.x,
            q.y,
            q.z,
            q.w};
  }
  static Recv to_record(const Sums& s) {
    return {{float(s.a.x), float(s.a.y), float(s.a.z), float(s.u_dt)}, {float(s.vsig), float(s.h_dt), 0.0f, 0.0f}};
  }
};

template <LoopKind L>
std::vector<typename Traits<L>::Input> load_cell(const ParticleSystem& ps, const Cell& c, const Vec3f& shift) {
  std::vector<typename Traits<L>::Input> in(c.count);
  const Vec3d centre = c.center();
  for (int k = 0; k < c.count; ++k) in[k] = Traits<L>::load(ps, c.first + k, cell_position(ps, c.first + k, centre, shift));
  return in;
}

template <LoopKind L>
void self_visit_impl(ParticleSystem& ps, const CellTree& tree, int cell, const VisitOptions& opt) {
  using T = Traits<L>;
  const Cell& c = tree.cells[cell];
  const auto in = load_cell<L>(ps, c, {});
  std::int64_t coincident = 0;
  for (int i = 0; i < c.count; ++i) {
    typename T::Sums s;
    T::self(in[i], opt.params, s);
    for (int j = 0; j < c.count; ++j)
      if (j != i) T::term(in[i], in[j], opt.params, s, coincident);
    T::commit(ps, c.first + i, s);
  }
  if (opt.stats) {
    opt.stats->coincident += coincident;
    opt.stats->candidates += std::int64_t(c.count) * (c.count - 1);
    ++opt.stats->self_visits;
  }
}

// One direction of a pair: every particle of `dst` gathers from `src`.
template <LoopKind L>
std::int64_t gather_side(ParticleSystem& ps, const Cell& dst, const std::vector<typename Traits<L>::Input>& in_dst,
                         const Cell& src, const std::vector<typename Traits<L>::Input>& in_src,
                         std::span<const SortEntry> sort_dst, std::span<const SortEntry> sort_src, double dshift,
                         const VisitOptions& opt, std::int64_t& coincident) {
  using T = Traits<L>;
  std::int64_t candidates = 0;
  if (sort_dst.empty() || sort_src.empty()) {
    for (int i = 0; i < dst.count; ++i) {
      typename T::Sums s;
      for (int j = 0; j < src.count; ++j) T::term(in_dst[i], in_src[j], opt.params, s, coincident);
      T::commit(ps, dst.first + i, s);
    }
    return std::int64_t(dst.count) * src.count;
  }
  double h_src = 0.0;
  for (const auto& p : in_src) h_src = std::max(h_src, p.h);
  const double eps = 1e-5 * ps.box;
  std::vector<int> cand;
  cand.reserve(src.count);
  for (const SortEntry& e : sort_dst) {
    const int i = e.idx - dst.first;
    const double window = opt.params.gamma_k * std::max(in_dst[i].h, h_src) + eps;
    cand.clear();
    for (const SortEntry& f : sort_window(sort_src, float(double(e.d) - dshift), float(window)))
      cand.push_back(f.idx - src.first);
    std::sort(cand.begin(), cand.end());
    candidates += std::int64_t(cand.size());
    typename T::Sums s;
    for (int j : cand) T::term(in_dst[i], in_src[j], opt.params, s, coincident);
    T::commit(ps, dst.first + i, s);
  }
  return candidates;
}

template <LoopKind L>
void pair_visit_impl(ParticleSystem& ps, const CellTree& tree, int a, int b, const Vec3f& shift,
                     const VisitOptions& opt) {
  const Cell& ca = tree.cells[a];
  const Cell& cb = tree.cells[b];
  if (ca.count == 0 || cb.count == 0) return;
  const auto in_a = load_cell<L>(ps, ca, {});
  const auto in_b = load_cell<L>(ps, cb, shift);

  std::span<const SortEntry> sa, sb;
  double dshift = 0.0;
  if (opt.use_sorts && tree.sorted(a) && tree.sorted(b) && !tree.sorts[a][0].empty()) {
    bool flipped = false;
    const int axis = axis_for_offset(tree.relative_offset(a, b, shift), flipped);
    sa = tree.sorts[a][axis];
    sb = tree.sorts[b][axis];
    dshift = dot(shift.as<double>(), pair_axis_units()[axis]);
  }
  std::int64_t coincident = 0;
  std::int64_t candidates = gather_side<L>(ps, ca, in_a, cb, in_b, sa, sb, dshift, opt, coincident);
  candidates += gather_side<L>(ps, cb, in_b, ca, in_a, sb, sa, -dshift, opt, coincident);
  if (opt.stats) {
    opt.stats->coincident += coincident;
    opt.stats->candidates += candidates;
    ++opt.stats->pair_visits;
  }
}

template <LoopKind L>
void interact_impl(std::span<const typename Traits<L>::Send> send, std::span<typename Traits<L>::Recv> recv,
                   std::size_t first, std::size_t last, const SphParams& p, LoopStats* stats) {
  using T = Traits<L>;
  std::int64_t coincident = 0;
  for (std::size_t k = first; k < last; ++k) {
    const auto pi = T::from_record(send[k]);
    const std::size_t cf = std::size_t(send[k].range.cf);
    const std::size_t cl = std::size_t(send[k].range.cl);
    const bool self = cf <= k && k <= cl;
    typename T::Sums s;
    if (self) T::self(pi, p, s);
    for (std::size_t j = cf; j <= cl; ++j)
      if (j != k) T::term(pi, T::from_record(send[j]), p, s, coincident);
    recv[k] = T::to_record(s);
  }
  if (stats) stats->coincident += coincident;
}

bool cell_empty(const CellTree& tree, int c) { return tree.cells[c].count == 0; }

}  // namespace

void self_visit(LoopKind loop, ParticleSystem& ps, const CellTree& tree, int cell, const VisitOptions& opt) {
  switch (loop) {
    case LoopKind::density: return self_visit_impl<LoopKind::density>(ps, tree, cell, opt);
    case LoopKind::gradient: return self_visit_impl<LoopKind::gradient>(ps, tree, cell, opt);
    case LoopKind::force: return self_visit_impl<LoopKind::force>(ps, tree, cell, opt);
  }
}

void pair_visit(LoopKind loop, ParticleSystem& ps, const CellTree& tree, int a, int b, const Vec3f& shift,
                const VisitOptions& opt) {
  switch (loop) {
    case LoopKind::density: return pair_visit_impl<LoopKind::density>(ps, tree, a, b, shift, opt);
    case LoopKind::gradient: return pair_visit_impl<LoopKind::gradient>(ps, tree, a, b, shift, opt);
    case LoopKind::force: return pair_visit_impl<LoopKind::force>(ps, tree, a, b, shift, opt);
  }
}

void density_interact(std::span<const SendDensity> send, std::span<RecvDensity> recv, std::size_t first,
                      std::size_t last, const SphParams& p, LoopStats* stats) {
  interact_impl<LoopKind::density>(send, recv, first, last, p, stats);
}

void gradient_interact(std::span<const SendGradient> send, std::span<RecvGradient> recv, std::size_t first,
                       std::size_t last, const SphParams& p, LoopStats* stats) {
  interact_impl<LoopKind::gradient>(send, recv, first, last, p, stats);
}

void force_interact(std::span<const SendForce> send, std::span<RecvForce> recv, std::size_t first,
                    std::size_t last, const SphParams& p, LoopStats* stats) {
  interact_impl<LoopKind::force>(send, recv, first, last, p, stats);
}

void enumerate_pair(const CellTree& tree, int a, int b, const Vec3f& shift, std::vector<Visit>& out,
                    std::vector<int>* recursed) {
  if (cell_empty(tree, a) || cell_empty(tree, b)) return;
  const Cell& ca = tree.cells[a];
  const Cell& cb = tree.cells[b];
  if (tree.plan_recurse(ca) && tree.plan_recurse(cb)) {
    if (recursed) {
      recursed->push_back(a);
      if (b != a) recursed->push_back(b);
    }
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        const int da = ca.first_daughter + i;
        const int db = cb.first_daughter + j;
        if (!cell_empty(tree, da) && !cell_empty(tree, db) && tree.adjacent(da, db, shift))
          enumerate_pair(tree, da, db, shift, out, recursed);
      }
    return;
  }
  out.push_back({a, b, shift});
}

void enumerate_self(const CellTree& tree, int cell, std::vector<Visit>& out, std::vector<int>* recursed) {
  const Cell& c = tree.cells[cell];
  if (c.count == 0) return;
  if (tree.plan_recurse(c)) {
    if (recursed) recursed->push_back(cell);
    for (int i = 0; i < 8; ++i) enumerate_self(tree, c.first_daughter + i, out, recursed);
    for (int i = 0; i < 8; ++i)
      for (int j = i + 1; j < 8; ++j) enumerate_pair(tree, c.first_daughter + i, c.first_daughter + j, {}, out, recursed);
  } else {
    out.push_back({cell, -1, {}});
  }
  // A single top cell spans the box: its own periodic images are neighbours.
  if (tree.top_grid == 1 && c.depth == 0) {
    const float L = float(tree.box);
    for (const auto& o : pair_axis_offsets())
      enumerate_pair(tree, cell, cell, {o.x * L, o.y * L, o.z * L}, out, recursed);
  }
}

void run_visit(LoopKind loop, ParticleSystem& ps, const CellTree& tree, const Visit& v, const VisitOptions& opt) {
  if (v.b < 0) self_visit(loop, ps, tree, v.a, opt);
  else pair_visit(loop, ps, tree, v.a, v.b, v.shift, opt);
}

}  // namespace tasksph
