#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "tasksph/cell_tree.hpp"
#include "tasksph/particles.hpp"
#include "tasksph/sph_loops.hpp"

namespace tasksph {

struct HsolveConfig {
  double tolerance = 1e-4;
  int max_iterations = 10;
  double bracket_factor = 2.0;  // initial bisection bracket [h/f, h*f]
  int max_bisections = 200;
};

struct ViscosityParams {
  double alpha_max = 2.0;
  double decay_length = 0.05;
  double beta = 3.0;
  double alpha_init = 0.1;
};

struct ConductionParams {
  double beta_c = 1.0;
  double alpha_min = 0.0;
  double alpha_max = 1.0;
  double alpha_init = 0.0;
};

struct GhostParams {
  KernelSpec kernel;
  double gamma = 5.0 / 3.0;
  HsolveConfig hsolve;
  ViscosityParams visc;
  ConductionParams cond;
  double c_cfl = 0.1;
};

struct GhostStats {
  std::atomic<std::int64_t> newton_iterations{0};
  std::atomic<std::int64_t> max_particle_iterations{0};
  std::atomic<std::int64_t> bisections{0};
  std::atomic<std::int64_t> clamped_u{0};
  std::atomic<std::int64_t> coincident{0};
};

struct NeighbourImage {
  int top;
  Vec3f shift;
};

// Top-level cells (with periodic shifts) that can hold neighbours of particles
// in `top`, including `top` itself with zero shift.
std::vector<NeighbourImage> neighbour_images(const CellTree& tree, int top);

// Full density sums for particle i at smoothing length h, gathered from the tree.
DensitySums gather_density(const ParticleSystem& ps, const CellTree& tree, const std::vector<NeighbourImage>& images,
                           std::int32_t i, double h, double gamma_k, std::int64_t& coincident);

// Density ghost for a top-level cell: converge h, finalise rho, f, B, div, curl
// and the equation of state. Updates the cell's h_max.
void ghost_density(ParticleSystem& ps, CellTree& tree, int top, const GhostParams& p, GhostStats* stats = nullptr);

// Switch evolution for particles [first, last) after the gradient loop.
void ghost_gradient(ParticleSystem& ps, std::int32_t first, std::int32_t last, double dt, const GhostParams& p);
// Store gradient results without evolving switches (the zero-length first step).
void store_gradient_state(ParticleSystem& ps, std::int32_t first, std::int32_t last);

// Copy force accumulators into a, du/dt, dh/dt and v_sig.
void finalize_force(ParticleSystem& ps, std::int32_t first, std::int32_t last);

// v += a dt_half; u = max(0, u + du/dt dt_half); EoS refresh. Returns clamped-u count.
std::int64_t kick(ParticleSystem& ps, std::int32_t first, std::int32_t last, double dt_half, double gamma);

double timestep_range(const ParticleSystem& ps, std::int32_t first, std::int32_t last, double gamma_k, double c_cfl);
double compute_timestep(const ParticleSystem& ps, double gamma_k, double c_cfl);

void init_switches(ParticleSystem& ps, const GhostParams& p);

}  // namespace tasksph
