#include "tasksph/gresho.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace tasksph {

GreshoProfile analytic_eval(double r) {
  if (r < 0.2) return {5.0 * r, 5.0 + 12.5 * r * r};
  if (r < 0.4) return {2.0 - 5.0 * r, 9.0 + 12.5 * r * r - 20.0 * r + 4.0 * std::log(5.0 * r)};
  return {0.0, 3.0 + 4.0 * std::numbers::ln2};
}

double vortex_radius(const Vec3f& x, double box) {
  const double dx = double(x.x) - 0.5 * box;
  const double dy = double(x.y) - 0.5 * box;
  return std::sqrt(dx * dx + dy * dy);
}

ParticleSystem gresho_ic(const GreshoSetup& s) {
  if (s.resolution < 1) throw ConfigError("resolution must be positive");
  const int n = s.resolution;
  const std::size_t np = std::size_t(n) * n * n;
  const double dx = s.box / n;
  ParticleSystem ps;
  ps.resize(np);
  ps.box = s.box;
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> jit(-0.5 * s.jitter, 0.5 * s.jitter);
  const float mass = float(s.rho0 * s.box * s.box * s.box / double(np));
  std::size_t i = 0;
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy)
      for (int iz = 0; iz < n; ++iz, ++i) {
        Vec3d p{(ix + 0.5) * dx, (iy + 0.5) * dx, (iz + 0.5) * dx};
        if (s.jitter > 0.0)
          for (int d = 0; d < 3; ++d) p[d] += jit(rng) * dx;
        ps.id[i] = std::int64_t(i);
        ps.x[i] = {wrap_coord(float(p.x), float(s.box)), wrap_coord(float(p.y), float(s.box)),
                   wrap_coord(float(p.z), float(s.box))};
        const double ox = double(ps.x[i].x) - 0.5 * s.box;
        const double oy = double(ps.x[i].y) - 0.5 * s.box;
        const double r = std::sqrt(ox * ox + oy * oy);
        const GreshoProfile g = analytic_eval(r);
        ps.v[i] = r > 0.0 ? Vec3f{float(-g.v_theta * oy / r), float(g.v_theta * ox / r), 0.0f} : Vec3f{};
        ps.m[i] = mass;
        ps.h[i] = float(s.eta * dx);
        ps.u[i] = float(g.p / ((s.gamma - 1.0) * s.rho0));
        ps.rho[i] = float(s.rho0);
        ps.P[i] = float(g.p);
        ps.cs[i] = float(std::sqrt(s.gamma * g.p / s.rho0));
        ps.x_build[i] = ps.x[i];
      }
  return ps;
}

ErrorReport error_report(const ParticleSystem& ps, double box, int nbins) {
  ErrorReport rep;
  const double r_max = 0.5 * std::numbers::sqrt2 * box;
  rep.bins.resize(std::size_t(nbins));
  for (int b = 0; b < nbins; ++b) {
    rep.bins[b].r_lo = r_max * b / nbins;
    rep.bins[b].r_hi = r_max * (b + 1) / nbins;
  }
  std::vector<double> sv(nbins), sv2(nbins), sp(nbins), sp2(nbins);
  const double plateau = analytic_eval(1.0).p;
  double plateau_sum = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double ox = double(ps.x[i].x) - 0.5 * box;
    const double oy = double(ps.x[i].y) - 0.5 * box;
    const double r = std::sqrt(ox * ox + oy * oy);
    const double vt = r > 0.0 ? (-double(ps.v[i].x) * oy + double(ps.v[i].y) * ox) / r : 0.0;
    const double p = ps.P[i];
    const GreshoProfile g = analytic_eval(r);
    rep.l1_v += std::abs(vt - g.v_theta);
    rep.l1_p += std::abs(p - g.p);
    if (r >= 0.4) {
      plateau_sum += p;
      ++rep.plateau_count;
    }
    const int b = std::min(nbins - 1, int(r / r_max * nbins));
    ++rep.bins[b].count;
    sv[b] += vt;
    sv2[b] += vt * vt;
    sp[b] += p;
    sp2[b] += p * p;
  }
  rep.total = std::int64_t(ps.size());
  if (rep.total > 0) {
    rep.l1_v /= double(rep.total);
    rep.l1_p /= double(rep.total);
  }
  if (rep.plateau_count > 0) {
    rep.plateau_p = plateau_sum / double(rep.plateau_count);
    rep.plateau_rel = std::abs(rep.plateau_p - plateau) / plateau;
  }
  for (int b = 0; b < nbins; ++b) {
    auto& bin = rep.bins[b];
    if (bin.count == 0) continue;
    const double n = double(bin.count);
    bin.v_mean = sv[b] / n;
    bin.p_mean = sp[b] / n;
    bin.v_std = std::sqrt(std::max(0.0, sv2[b] / n - bin.v_mean * bin.v_mean));
    bin.p_std = std::sqrt(std::max(0.0, sp2[b] / n - bin.p_mean * bin.p_mean));
  }
  return rep;
}

void write_error_report(const std::string& path, const ErrorReport& r) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError(fmt::format("cannot open '{}'", path));
  fmt::print(f, "# l1_v_theta={:.9g} l1_p={:.9g} plateau_p={:.9g} plateau_rel={:.6g} particles={}\n", r.l1_v, r.l1_p,
             r.plateau_p, r.plateau_rel, r.total);
  fmt::print(f, "r_lo,r_hi,count,v_theta_mean,v_theta_std,p_mean,p_std\n");
  for (const auto& b : r.bins)
    fmt::print(f, "{:.6f},{:.6f},{},{:.9g},{:.9g},{:.9g},{:.9g}\n", b.r_lo, b.r_hi, b.count, b.v_mean, b.v_std,
               b.p_mean, b.p_std);
  std::fclose(f);
}

}  // namespace tasksph
