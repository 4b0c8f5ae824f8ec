#include "tasksph/particles.hpp"

#include <fmt/format.h>
#include <fmt/os.h>

#include <cmath>
#include <limits>

namespace tasksph {

const char* to_string(LoopKind k) {
  switch (k) {
    case LoopKind::density: return "density";
    case LoopKind::gradient: return "gradient";
    case LoopKind::force: return "force";
  }
  return "?";
}

static void check_kernel_args(double r, double h) {
  if (!(h > 0.0)) throw DomainError(fmt::format("kernel: smoothing length must be positive, got {}", h));
  if (!(r >= 0.0)) throw DomainError(fmt::format("kernel: negative separation {}", r));
}

KernelValue kernel_eval(const KernelSpec& spec, double r, double h) {
  check_kernel_args(r, h);
  const KernelSample s = kernel_sample(r, h, spec.gamma_k);
  return {s.W, s.dW_dr};
}

double kernel_dW_dh(const KernelSpec& spec, double r, double h) {
  check_kernel_args(r, h);
  return kernel_sample(r, h, spec.gamma_k).dW_dh;
}

EosState eos_update(double rho, double u, double gamma) {
  if (!(rho > 0.0)) throw DomainError(fmt::format("eos: density must be positive, got {}", rho));
  const double P = (gamma - 1.0) * rho * u;
  return {P, std::sqrt(gamma * P / rho)};
}

float wrap_coord(float x, float box) {
  if (x >= 0.0f && x < box) return x;
  float w = x - std::floor(x / box) * box;
  if (w >= box || w < 0.0f) w = 0.0f;
  return w;
}

namespace {

template <class... Vs>
void resize_all(std::size_t n, Vs&... vs) {
  (vs.resize(n), ...);
}

template <class V>
void permute_one(V& vec, std::span<const std::int32_t> perm) {
  V out(vec.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = vec[perm[i]];
  vec.swap(out);
}

template <class... Vs>
void permute_all(std::span<const std::int32_t> perm, Vs&... vs) {
  (permute_one(vs, perm), ...);
}

}  // namespace

#define TASKSPH_ALL_FIELDS                                                                    \
  id, x, v, a, m, h, u, rho, P, cs, wcount, dwcount_dh, drho_dh, f, balsara, alpha_v,         \
      alpha_c, div_v, div_v_prev, lap_u, v_sig, u_dt, h_dt, curl_v, x_build, acc_rho,         \
      acc_drho_dh, acc_wcount, acc_dwcount_dh, acc_div, acc_lap_u, acc_u_dt, acc_h_dt, acc_curl, \
      acc_a, acc_vsig

void ParticleSystem::resize(std::size_t n) {
  resize_all(n, TASKSPH_ALL_FIELDS);
}

void ParticleSystem::permute(std::span<const std::int32_t> perm) {
  if (perm.size() != size()) throw UsageError("permute: permutation length mismatch");
  permute_all(perm, TASKSPH_ALL_FIELDS);
}

#undef TASKSPH_ALL_FIELDS

void ParticleSystem::clear_density_acc(std::size_t first, std::size_t last) {
  for (std::size_t i = first; i < last; ++i) {
    acc_rho[i] = acc_drho_dh[i] = acc_wcount[i] = acc_dwcount_dh[i] = acc_div[i] = 0.0;
    acc_curl[i] = {};
  }
}

void ParticleSystem::clear_gradient_acc(std::size_t first, std::size_t last) {
  for (std::size_t i = first; i < last; ++i) {
    acc_lap_u[i] = 0.0;
    acc_vsig[i] = 0.0f;
  }
}

void ParticleSystem::clear_force_acc(std::size_t first, std::size_t last) {
  for (std::size_t i = first; i < last; ++i) {
    acc_a[i] = {};
    acc_u_dt[i] = acc_h_dt[i] = 0.0;
    acc_vsig[i] = 0.0f;
  }
}

void ParticleSystem::check_invariants() const {
  const std::size_t n = size();
  const std::size_t lens[] = {x.size(), v.size(), m.size(), h.size(), u.size(), rho.size(),
                              P.size(), cs.size(), alpha_v.size(), acc_rho.size()};
  for (std::size_t len : lens)
    if (len != n) throw InvariantError("particle arrays have inconsistent lengths");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(m[i] > 0.0f)) throw InvariantError(fmt::format("particle {}: mass {} not positive", id[i], m[i]));
    if (!(h[i] > 0.0f)) throw InvariantError(fmt::format("particle {}: h {} not positive", id[i], h[i]));
    if (!(rho[i] >= 0.0f)) throw InvariantError(fmt::format("particle {}: density {} negative", id[i], rho[i]));
    if (!(u[i] >= 0.0f)) throw InvariantError(fmt::format("particle {}: energy {} negative", id[i], u[i]));
    for (int d = 0; d < 3; ++d)
      if (!(x[i][d] >= 0.0f && x[i][d] < box))
        throw InvariantError(fmt::format("particle {}: position outside the periodic box", id[i]));
  }
}

void write_snapshot(const std::string& path, const ParticleSystem& ps) {
  auto out = fmt::output_file(path);
  out.print("id x y z vx vy vz m h rho u P\n");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out.print("{} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g}\n",
              ps.id[i], ps.x[i].x, ps.x[i].y, ps.x[i].z, ps.v[i].x, ps.v[i].y, ps.v[i].z, ps.m[i],
              ps.h[i], ps.rho[i], ps.u[i], ps.P[i]);
  }
}

}  // namespace tasksph
