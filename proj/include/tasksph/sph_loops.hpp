#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tasksph/cell_tree.hpp"
#include "tasksph/particles.hpp"
#include "tasksph/records.hpp"

namespace tasksph {

struct SphParams {
  double gamma_k = 2.0;
  double beta = 3.0;  // signal-velocity coefficient
};

// Per-particle inputs, widened to double. Both the CPU path and the record
// kernels build these from the same 32-bit values, so the pair arithmetic is
// identical in the two paths.
struct DensityInput {
  Vec3d x;
  double h;
  Vec3d v;
  double m;
};

struct GradientInput {
  Vec3d x;
  double h;
  Vec3d v;
  double rho, P, cs, u, m;
};

struct ForceInput {
  Vec3d x;
  double h;
  Vec3d v;
  double m, rho, P, cs, u, f, alpha_v, balsara, alpha_c;
};

struct DensitySums {
  double rho = 0, drho_dh = 0, wcount = 0, dwcount_dh = 0, div = 0;
  Vec3d curl;
};

struct GradientSums {
  double vsig = 0, lap_u = 0;
};

struct ForceSums {
  Vec3d a;
  double u_dt = 0, h_dt = 0, vsig = 0;
};

// --- pair terms: particle i gathers from particle j -------------------------

inline void density_self_term(const DensityInput& pi, double gamma_k, DensitySums& s) {
  const KernelSample k = kernel_sample(0.0, pi.h, gamma_k);
  s.rho += pi.m * k.W;
  s.wcount += k.W;
  s.dwcount_dh += k.dW_dh;
  s.drho_dh += pi.m * k.dW_dh;
}

inline void density_term(const DensityInput& pi, const DensityInput& pj, double gamma_k, DensitySums& s,
                         std::int64_t& coincident) {
  const Vec3d dx = pi.x - pj.x;
  const double r2 = norm2(dx);
  const double H = gamma_k * pi.h;
  if (r2 >= H * H) return;
  if (r2 == 0.0) {
    ++coincident;
    return;
  }
  const double r = std::sqrt(r2);
  const KernelSample k = kernel_sample(r, pi.h, gamma_k);
  s.rho += pj.m * k.W;
  s.wcount += k.W;
  s.dwcount_dh += k.dW_dh;
  s.drho_dh += pj.m * k.dW_dh;
  const Vec3d grad = dx * (k.dW_dr / r);
  const Vec3d dv = pj.v - pi.v;
  s.div += pj.m * dot(dv, grad);
  s.curl += cross(grad, dv) * pj.m;
}

inline void gradient_term(const GradientInput& pi, const GradientInput& pj, const SphParams& p, GradientSums& s,
                          std::int64_t& coincident) {
  const Vec3d dx = pi.x - pj.x;
  const double r2 = norm2(dx);
  const double H = p.gamma_k * std::max(pi.h, pj.h);
  if (r2 >= H * H) return;
  if (r2 == 0.0) {
    ++coincident;
    return;
  }
  const double r = std::sqrt(r2);
  const double vr = dot(pi.v - pj.v, dx);
  const double mu = vr < 0.0 ? vr / r : 0.0;
  s.vsig = std::max(s.vsig, pi.cs + pj.cs - p.beta * mu);
  const double Hi = p.gamma_k * pi.h;
  if (r2 < Hi * Hi) {
    const KernelSample k = kernel_sample(r, pi.h, p.gamma_k);
    s.lap_u += 2.0 * (pj.m / pj.rho) * (pi.u - pj.u) * k.dW_dr / r;
  }
}

inline void force_term(const ForceInput& pi, const ForceInput& pj, const SphParams& p, ForceSums& s,
                       std::int64_t& coincident) {
  const Vec3d dx = pi.x - pj.x;
  const double r2 = norm2(dx);
  const double Hi = p.gamma_k * pi.h;
  const double Hj = p.gamma_k * pj.h;
  const double H = std::max(Hi, Hj);
  if (r2 >= H * H) return;
  if (r2 == 0.0) {
    ++coincident;
    return;
  }
  const double r = std::sqrt(r2);
  const double wi = r2 < Hi * Hi ? kernel_sample(r, pi.h, p.gamma_k).dW_dr : 0.0;
  const double wj = r2 < Hj * Hj ? kernel_sample(r, pj.h, p.gamma_k).dW_dr : 0.0;
  const Vec3d rhat = dx * (1.0 / r);

  const double Pi_term = pi.f * pi.P / (pi.rho * pi.rho);
  const double Pj_term = pj.f * pj.P / (pj.rho * pj.rho);

  const Vec3d dv = pi.v - pj.v;
  const double vr = dot(dv, rhat);
  const double mu = vr < 0.0 ? vr : 0.0;
  const double vsig = pi.cs + pj.cs - p.beta * mu;
  const double alpha = 0.25 * (pi.alpha_v + pj.alpha_v) * (pi.balsara + pj.balsara);
  const double nu = -alpha * mu * vsig / (0.5 * (pi.rho + pj.rho));

  const double radial = Pi_term * wi + Pj_term * wj + 0.5 * nu * (pi.f * wi + pj.f * wj);
  s.a -= rhat * (pj.m * radial);

  s.u_dt += pj.m * Pi_term * wi * vr;

  const double Psum = pi.P + pj.P;
  const double alpha_c = Psum > 0.0 ? (pi.P * pi.alpha_c + pj.P * pj.alpha_c) / Psum
                                    : 0.5 * (pi.alpha_c + pj.alpha_c);
  const double v_c = std::abs(vr) + std::sqrt(2.0 * std::abs(pi.P - pj.P) / (pi.rho + pj.rho));
  s.u_dt += alpha_c * v_c * pj.m * (pi.u - pj.u) * (pi.f * wi + pj.f * wj) / (pi.rho + pj.rho);

  s.h_dt += pj.m * wi * vr;
  s.vsig = std::max(s.vsig, vsig);
}

// --- loading inputs ----------------------------------------------------------

// Position of particle idx as seen from a cell centred at `centre`, moved by a
// periodic `shift`. Evaluated in 32-bit, exactly as when packing records.
inline Vec3f cell_position(const ParticleSystem& ps, std::int32_t idx, const Vec3d& centre, const Vec3f& shift) {
  const Vec3f x = unwrap_near(ps.x[idx], centre, float(ps.box));
  return {x.x + shift.x, x.y + shift.y, x.z + shift.z};
}

DensityInput load_density(const ParticleSystem& ps, std::int32_t i, const Vec3f& x);
GradientInput load_gradient(const ParticleSystem& ps, std::int32_t i, const Vec3f& x);
ForceInput load_force(const ParticleSystem& ps, std::int32_t i, const Vec3f& x);

// Add one task's partial sums, rounded to the 32-bit record precision.
void commit_density(ParticleSystem& ps, std::int32_t i, const DensitySums& s);
void commit_gradient(ParticleSystem& ps, std::int32_t i, const GradientSums& s);
void commit_force(ParticleSystem& ps, std::int32_t i, const ForceSums& s);

struct LoopStats {
  std::atomic<std::int64_t> coincident{0};
  std::atomic<std::int64_t> candidates{0};
  std::atomic<std::int64_t> pair_visits{0};
  std::atomic<std::int64_t> self_visits{0};
};

// --- cpu path ----------------------------------------------------------------

struct VisitOptions {
  SphParams params;
  bool use_sorts = true;  // pair candidates from the sorted projections when available
  LoopStats* stats = nullptr;
};

void self_visit(LoopKind loop, ParticleSystem& ps, const CellTree& tree, int cell, const VisitOptions& opt);
void pair_visit(LoopKind loop, ParticleSystem& ps, const CellTree& tree, int a, int b, const Vec3f& shift,
                const VisitOptions& opt);

// --- record kernels ----------------------------------------------------------
// Process records [first, last). A record whose own index lies inside its
// partner range belongs to a self interaction.

void density_interact(std::span<const SendDensity> send, std::span<RecvDensity> recv, std::size_t first,
                      std::size_t last, const SphParams& p, LoopStats* stats = nullptr);
void gradient_interact(std::span<const SendGradient> send, std::span<RecvGradient> recv, std::size_t first,
                       std::size_t last, const SphParams& p, LoopStats* stats = nullptr);
void force_interact(std::span<const SendForce> send, std::span<RecvForce> recv, std::size_t first,
                    std::size_t last, const SphParams& p, LoopStats* stats = nullptr);

// --- interaction decomposition ----------------------------------------------

struct Visit {
  std::int32_t a;
  std::int32_t b;  // -1 for a self visit
  Vec3f shift;
};

// Interaction visits covering one cell with itself (including its periodic
// images when the cell spans the whole box) or one adjacent pair, recursing
// into daughters while the recursion criterion holds. `recursed` (if given)
// receives the ids of cells that were descended through.
void enumerate_self(const CellTree& tree, int cell, std::vector<Visit>& out, std::vector<int>* recursed = nullptr);
void enumerate_pair(const CellTree& tree, int a, int b, const Vec3f& shift, std::vector<Visit>& out,
                    std::vector<int>* recursed = nullptr);

void run_visit(LoopKind loop, ParticleSystem& ps, const CellTree& tree, const Visit& v, const VisitOptions& opt);

}  // namespace tasksph
