#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "tasksph/sph_loops.hpp"

using namespace tasksph;
using fixtures::CellSystem;
using fixtures::Path;

namespace {

std::vector<oracle::P> load_all(const ParticleSystem& ps) {
  std::vector<oracle::P> all;
  for (std::size_t i = 0; i < ps.size(); ++i) all.push_back(oracle::load(ps, i));
  return all;
}

std::vector<std::size_t> everyone(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

double rel(double got, const oracle::Acc& ref) {
  const double sc = std::max(std::abs(ref.v), 0.1 * ref.scale);
  return sc > 0 ? std::abs(got - ref.v) / sc : std::abs(got);
}

}  // namespace

TEST_CASE("density of an isolated particle is its self term") {
  auto s = fixtures::random_cells(1, 4, {{21, 1}});
  s.ps.m[0] = 1.0f;
  s.ps.h[0] = 1.0f;
  fixtures::run(LoopKind::density, s, {21, -1, {}}, Path::naive);
  CHECK(s.ps.acc_rho[0] == doctest::Approx(oracle::W(0.0, 1.0)).epsilon(1e-7));
  CHECK(s.ps.acc_div[0] == 0.0);
  CHECK(s.ps.acc_curl[0] == Vec3d{});
}

TEST_CASE("two-body density matches a hand sum") {
  auto s = fixtures::random_cells(2, 4, {{21, 2}});
  const float h = 0.05f;
  s.ps.h[0] = s.ps.h[1] = h;
  s.ps.m[0] = s.ps.m[1] = 2.0f;
  s.ps.x[0] = {0.35f, 0.35f, 0.35f};
  s.ps.x[1] = {0.35f + 0.5f * 2.0f * h, 0.35f, 0.35f};
  const double r = double(s.ps.x[1].x) - double(s.ps.x[0].x);
  fixtures::run(LoopKind::density, s, {21, -1, {}}, Path::naive);
  const double expect = 2.0 * oracle::W(0.0, h) + 2.0 * oracle::W(r, h);
  CHECK(s.ps.acc_rho[0] == doctest::Approx(expect).epsilon(1e-7));
  CHECK(s.ps.acc_rho[1] == doctest::Approx(expect).epsilon(1e-7));
}

TEST_CASE("periodic 16^3 lattice matches the all-pairs oracle") {
  auto s = fixtures::lattice_system(16, 4, 42);
  const auto all = load_all(s.ps);
  const auto js = everyone(s.ps.size());
  const SphParams p;
  for (bool sorts : {false, true}) {
    CAPTURE(sorts);
    double worst = 0.0;
    fixtures::run_all(LoopKind::density, s, sorts);
    for (std::size_t i = 0; i < s.ps.size(); i += 7) {
      const auto o = oracle::density(all, i, js, true, 1.0);
      worst = std::max({worst, rel(s.ps.acc_rho[i], o.rho), rel(s.ps.acc_wcount[i], o.wcount),
                        rel(s.ps.acc_drho_dh[i], o.drho_dh), rel(s.ps.acc_dwcount_dh[i], o.dwcount_dh),
                        rel(s.ps.acc_div[i], o.div), rel(s.ps.acc_curl[i].x, o.curl[0]),
                        rel(s.ps.acc_curl[i].y, o.curl[1]), rel(s.ps.acc_curl[i].z, o.curl[2])});
    }
    CHECK(worst <= 1e-6);
    worst = 0.0;
    fixtures::run_all(LoopKind::gradient, s, sorts);
    for (std::size_t i = 0; i < s.ps.size(); i += 7) {
      const auto o = oracle::gradient(all, i, js, 1.0, p.beta);
      worst = std::max({worst, rel(s.ps.acc_lap_u[i], o.lap_u),
                        std::abs(s.ps.acc_vsig[i] - o.vsig) / o.vsig});
    }
    CHECK(worst <= 1e-6);
    worst = 0.0;
    fixtures::run_all(LoopKind::force, s, sorts);
    for (std::size_t i = 0; i < s.ps.size(); i += 7) {
      const auto o = oracle::force(all, i, js, 1.0, p.beta);
      worst = std::max({worst, rel(s.ps.acc_a[i].x, o.a[0]), rel(s.ps.acc_a[i].y, o.a[1]),
                        rel(s.ps.acc_a[i].z, o.a[2]), rel(s.ps.acc_u_dt[i], o.u_dt), rel(s.ps.acc_h_dt[i], o.h_dt),
                        std::abs(s.ps.acc_vsig[i] - o.vsig) / o.vsig});
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("random cells and pairs match the oracle on every path") {
  const int g = 4;
  const int pairs[][2] = {{21, 22}, {21, 25}, {21, 26}, {21, 37}, {21, 42}, {21, 38}, {21, 41}};
  int n = 0;
  for (int trial = 0; trial < 14; ++trial) {
    const bool self = trial % 2 == 0;
    const int a = self ? 21 : pairs[trial / 2][0];
    const int b = self ? -1 : pairs[trial / 2][1];
    std::vector<std::pair<int, int>> cc{{a, 10 + 7 * trial % 55}};
    if (!self) cc.push_back({b, 64 - 3 * trial});
    auto s = fixtures::random_cells(1000 + trial, g, cc);
    for (LoopKind loop : {LoopKind::density, LoopKind::gradient, LoopKind::force})
      for (Path path : {Path::naive, Path::sorted, Path::records}) {
        fixtures::run(loop, s, {a, b, {}}, path);
        CAPTURE(trial);
        CAPTURE(fixtures::to_string(path));
        CHECK(fixtures::deviation(loop, s, {a, b, {}}) <= 1.0);
        ++n;
      }
  }
  CHECK(n == 14 * 9);
}

TEST_CASE("sorted, naive and record paths agree bitwise") {
  auto s = fixtures::random_cells(77, 4, {{21, 50}, {42, 40}});
  for (LoopKind loop : {LoopKind::density, LoopKind::gradient, LoopKind::force})
    for (Visit v : {Visit{21, 42, {}}, Visit{21, -1, {}}}) {
      fixtures::run(loop, s, v, Path::naive);
      const auto rho = s.ps.acc_rho, lap = s.ps.acc_lap_u, udt = s.ps.acc_u_dt;
      const auto a = s.ps.acc_a;
      const auto vs = s.ps.acc_vsig;
      for (Path p : {Path::sorted, Path::records}) {
        fixtures::run(loop, s, v, p);
        CAPTURE(fixtures::to_string(p));
        CAPTURE(v.b);
        CHECK(s.ps.acc_rho == rho);
        CHECK(s.ps.acc_lap_u == lap);
        CHECK(s.ps.acc_u_dt == udt);
        CHECK(s.ps.acc_a == a);
        CHECK(s.ps.acc_vsig == vs);
      }
    }
}

TEST_CASE("self plus pair covers the merged neighbourhood") {
  auto s = fixtures::random_cells(9, 4, {{21, 40}, {22, 40}});
  fixtures::clear_all(s.ps);
  VisitOptions opt;
  for (Visit v : {Visit{21, -1, {}}, Visit{22, -1, {}}, Visit{21, 22, {}}}) run_visit(LoopKind::density, s.ps, s.tree, v, opt);
  const auto all = load_all(s.ps);
  const auto js = everyone(s.ps.size());
  for (std::size_t i = 0; i < s.ps.size(); ++i) {
    const auto o = oracle::density(all, i, js, true, 1.0);
    CHECK(rel(s.ps.acc_rho[i], o.rho) <= 1e-6);
    CHECK(rel(s.ps.acc_wcount[i], o.wcount) <= 1e-6);
  }
}

TEST_CASE("signal velocity") {
  SUBCASE("receding particles use the sound speeds only") {
    auto s = fixtures::random_cells(10, 4, {{21, 30}});
    const Vec3d c = s.tree.cells[21].center();
    for (std::size_t i = 0; i < s.ps.size(); ++i) s.ps.v[i] = ((s.ps.x[i].as<double>() - c) * 3.0).as<float>();
    fixtures::run(LoopKind::gradient, s, {21, -1, {}}, Path::naive);
    const auto all = load_all(s.ps);
    for (std::size_t i = 0; i < s.ps.size(); ++i) {
      double best = 0.0;
      for (std::size_t j = 0; j < s.ps.size(); ++j) {
        if (j == i) continue;
        const double r = norm((s.ps.x[i] - s.ps.x[j]).as<double>());
        if (r < 2.0 * std::max(s.ps.h[i], s.ps.h[j])) best = std::max(best, double(s.ps.cs[i]) + s.ps.cs[j]);
      }
      CHECK(s.ps.acc_vsig[i] == doctest::Approx(best).epsilon(1e-7));
    }
  }
  SUBCASE("approaching pair follows the hand formula") {
    auto s = fixtures::random_cells(11, 4, {{21, 2}});
    s.ps.x[0] = {0.30f, 0.30f, 0.30f};
    s.ps.x[1] = {0.34f, 0.33f, 0.30f};
    s.ps.h[0] = s.ps.h[1] = 0.05f;
    s.ps.v[0] = {1.0f, 0.0f, 0.0f};
    s.ps.v[1] = {-1.0f, 0.5f, 0.0f};
    s.ps.cs[0] = 1.0f;
    s.ps.cs[1] = 2.0f;
    SphParams p;
    p.beta = 2.5;
    fixtures::run(LoopKind::gradient, s, {21, -1, {}}, Path::naive, p);
    const Vec3d dx = (s.ps.x[0] - s.ps.x[1]).as<double>();
    const Vec3d dv = (s.ps.v[0] - s.ps.v[1]).as<double>();
    const double mu = dot(dv, dx) / norm(dx);
    REQUIRE(mu < 0.0);
    CHECK(s.ps.acc_vsig[0] == doctest::Approx(3.0 - 2.5 * mu).epsilon(1e-7));
    CHECK(s.ps.acc_vsig[0] >= 3.0f);
  }
}

TEST_CASE("Laplacian of a constant field vanishes") {
  auto s = fixtures::lattice_system(16, 4, 5, 0.0);
  for (auto& u : s.ps.u) u = 2.0f;
  fixtures::run_all(LoopKind::gradient, s, true);
  for (std::size_t i = 0; i < s.ps.size(); i += 11) CHECK(std::abs(s.ps.acc_lap_u[i]) <= 1e-5 * 2.0);
}

TEST_CASE("uniform static fluid feels no force") {
  auto s = fixtures::lattice_system(16, 4, 6, 0.0);
  for (std::size_t i = 0; i < s.ps.size(); ++i) {
    s.ps.v[i] = {};
    s.ps.h[i] = float(1.2348 / 16);
    s.ps.rho[i] = 1.0f;
    s.ps.P[i] = 1.0f;
    s.ps.u[i] = 1.5f;
    s.ps.f[i] = 1.0f;
  }
  fixtures::run_all(LoopKind::force, s, true);
  const double bound = 1e-6 * (1.0 / 1.0 / (1.0 / 16));
  for (std::size_t i = 0; i < s.ps.size(); ++i) CHECK(norm(s.ps.acc_a[i]) <= bound);
}

TEST_CASE("pairwise forces conserve momentum") {
  SUBCASE("two particles") {
    auto s = fixtures::random_cells(12, 4, {{21, 2}});
    s.ps.x[0] = {0.30f, 0.30f, 0.30f};
    s.ps.x[1] = {0.33f, 0.31f, 0.29f};
    s.ps.h[0] = 0.05f;
    s.ps.h[1] = 0.03f;
    fixtures::run(LoopKind::force, s, {21, -1, {}}, Path::naive);
    const Vec3d p = s.ps.acc_a[0] * double(s.ps.m[0]) + s.ps.acc_a[1] * double(s.ps.m[1]);
    CHECK(norm(p) <= 1e-6 * (norm(s.ps.acc_a[0]) * s.ps.m[0]));
  }
  SUBCASE("closed periodic batch") {
    auto s = fixtures::lattice_system(16, 4, 13);
    fixtures::run_all(LoopKind::force, s, true);
    Vec3d sum;
    double mag = 0.0;
    for (std::size_t i = 0; i < s.ps.size(); ++i) {
      sum += s.ps.acc_a[i] * double(s.ps.m[i]);
      mag += norm(s.ps.acc_a[i]) * s.ps.m[i];
    }
    CHECK(norm(sum) <= 1e-4 * mag);
  }
}

TEST_CASE("conduction vanishes for uniform internal energy") {
  auto s = fixtures::random_cells(14, 4, {{21, 40}});
  for (auto& u : s.ps.u) u = 1.7f;
  fixtures::run(LoopKind::force, s, {21, -1, {}}, Path::naive);
  // oracle with the conduction coefficients zeroed
  auto all = load_all(s.ps);
  for (auto& p : all) p.alpha_c = 0.0;
  const auto js = fixtures::members(s.tree, 21);
  for (std::size_t i : js) {
    const auto o = oracle::force(all, i, js, 1.0, 3.0);
    CHECK(rel(s.ps.acc_u_dt[i], o.u_dt) <= 1e-6);
  }
}
