#pragma once

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tasksph/common.hpp"

namespace tasksph {

enum class KernelFamily { cubic_spline };

struct KernelSpec {
  KernelFamily family = KernelFamily::cubic_spline;
  double gamma_k = 2.0;  // support radius H = gamma_k * h
  double eta = 1.2348;   // closure n_hat * h^3 = eta^3
};

struct KernelValue {
  double W;
  double dW_dr;
};

// Full sample used by the interaction loops. No argument checks here: callers
// guarantee h > 0.
struct KernelSample {
  double W;
  double dW_dr;
  double dW_dh;
};

// M4 spline written on u = r/H, normalised so that the 3-D integral is 1.
inline void cubic_spline_shape(double u, double& w, double& dw) {
  constexpr double norm = 8.0 / std::numbers::pi;
  if (u >= 1.0) {
    w = 0.0;
    dw = 0.0;
  } else if (u < 0.5) {
    w = norm * (1.0 - 6.0 * u * u + 6.0 * u * u * u);
    dw = norm * (-12.0 * u + 18.0 * u * u);
  } else {
    const double t = 1.0 - u;
    w = norm * 2.0 * t * t * t;
    dw = norm * -6.0 * t * t;
  }
}

inline KernelSample kernel_sample(double r, double h, double gamma_k) {
  KernelSample s{};
  if (r >= gamma_k * h) return s;
  const double inv_H = 1.0 / (gamma_k * h);
  double w, dw;
  cubic_spline_shape(r * inv_H, w, dw);
  const double inv_H3 = inv_H * inv_H * inv_H;
  s.W = w * inv_H3;
  s.dW_dr = dw * inv_H3 * inv_H;
  s.dW_dh = -(3.0 * s.W + r * s.dW_dr) / h;
  return s;
}

KernelValue kernel_eval(const KernelSpec& spec, double r, double h);
double kernel_dW_dh(const KernelSpec& spec, double r, double h);

struct EosIdealGas {
  double gamma = 5.0 / 3.0;
};

struct EosState {
  double P;
  double cs;
};

EosState eos_update(double rho, double u, double gamma);

// Structure-of-arrays particle state. Physics fields are 32-bit; the interaction
// accumulators are 64-bit so that per-task partial sums can be merged in any
// order without changing the result.
struct ParticleSystem {
  std::vector<std::int64_t> id;
  std::vector<Vec3f> x, v, a;
  std::vector<float> m, h, u, rho, P, cs;
  std::vector<float> wcount, dwcount_dh, drho_dh;  // n_hat and its h-derivative
  std::vector<float> f, balsara, alpha_v, alpha_c;
  std::vector<float> div_v, div_v_prev, lap_u, v_sig, u_dt, h_dt;
  std::vector<Vec3f> curl_v;
  std::vector<Vec3f> x_build;  // position at the last tree build

  // interaction accumulators
  std::vector<double> acc_rho, acc_drho_dh, acc_wcount, acc_dwcount_dh, acc_div, acc_lap_u;
  std::vector<double> acc_u_dt, acc_h_dt;
  std::vector<Vec3d> acc_curl, acc_a;
  std::vector<float> acc_vsig;

  double box = 1.0;

  std::size_t size() const { return id.size(); }
  void resize(std::size_t n);
  // new[i] = old[perm[i]]
  void permute(std::span<const std::int32_t> perm);

  void clear_density_acc(std::size_t first, std::size_t last);
  void clear_gradient_acc(std::size_t first, std::size_t last);
  void clear_force_acc(std::size_t first, std::size_t last);

  // Throws InvariantError naming the first violation.
  void check_invariants() const;
};

float wrap_coord(float x, float box);

void write_snapshot(const std::string& path, const ParticleSystem& ps);

}  // namespace tasksph
