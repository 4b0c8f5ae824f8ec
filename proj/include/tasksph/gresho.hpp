#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tasksph/particles.hpp"

namespace tasksph {

struct GreshoSetup {
  int resolution = 32;
  double box = 1.0;
  double rho0 = 1.0;
  double gamma = 5.0 / 3.0;
  double eta = 1.2348;
  double jitter = 0.0;  // lattice displacement, fraction of the spacing
  std::uint64_t seed = 1;
};

struct GreshoProfile {
  double v_theta;
  double p;
};

// Exact azimuthal velocity and pressure at distance r from the vortex axis.
GreshoProfile analytic_eval(double r);

// Distance of a point from the vortex axis (parallel to z through the box centre).
double vortex_radius(const Vec3f& x, double box);

ParticleSystem gresho_ic(const GreshoSetup& s);

struct ErrorBin {
  double r_lo = 0.0, r_hi = 0.0;
  std::int64_t count = 0;
  double v_mean = 0.0, v_std = 0.0;
  double p_mean = 0.0, p_std = 0.0;
};

struct ErrorReport {
  std::vector<ErrorBin> bins;
  double l1_v = 0.0;           // mean |v_theta - exact|
  double l1_p = 0.0;           // mean |p - exact|
  double plateau_p = 0.0;      // mean pressure at r >= 0.4
  double plateau_rel = 0.0;    // |plateau_p - (3 + 4 ln 2)| / (3 + 4 ln 2)
  std::int64_t plateau_count = 0;
  std::int64_t total = 0;
};

inline constexpr int kErrorBins = 64;

ErrorReport error_report(const ParticleSystem& ps, double box, int bins = kErrorBins);

void write_error_report(const std::string& path, const ErrorReport& r);

}  // namespace tasksph
