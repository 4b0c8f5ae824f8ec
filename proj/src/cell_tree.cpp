#include "tasksph/cell_tree.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace tasksph {

namespace {

constexpr int kMaxDepth = 24;

std::array<Vec3<int>, kNumAxes> make_offsets() {
  std::array<Vec3<int>, kNumAxes> out{};
  int n = 0;
  for (int ox = -1; ox <= 1; ++ox)
    for (int oy = -1; oy <= 1; ++oy)
      for (int oz = -1; oz <= 1; ++oz) {
        const int first = ox != 0 ? ox : (oy != 0 ? oy : oz);
        if (first > 0) out[n++] = {ox, oy, oz};
      }
  return out;
}

std::array<Vec3d, kNumAxes> make_units() {
  std::array<Vec3d, kNumAxes> out{};
  const auto& offs = pair_axis_offsets();
  for (int k = 0; k < kNumAxes; ++k) {
    const Vec3d o{double(offs[k].x), double(offs[k].y), double(offs[k].z)};
    out[k] = o * (1.0 / norm(o));
  }
  return out;
}

float displacement(const Vec3f& x, const Vec3f& x0, float box) {
  Vec3d d;
  for (int k = 0; k < 3; ++k) {
    double dk = double(x[k]) - double(x0[k]);
    if (dk > 0.5 * box) dk -= box;
    if (dk < -0.5 * box) dk += box;
    d[k] = dk;
  }
  return float(norm(d));
}

void split_cell(CellTree& tree, std::vector<std::int32_t>& order, const ParticleSystem& ps, int c) {
  if (tree.cells[c].count <= tree.split_threshold || tree.cells[c].depth >= kMaxDepth) return;
  const Cell parent = tree.cells[c];
  const Vec3d mid = parent.center();
  const double half = 0.5 * parent.width;

  std::array<std::int32_t, 8> counts{};
  std::vector<std::uint8_t> oct(parent.count);
  for (int k = 0; k < parent.count; ++k) {
    const Vec3f& x = ps.x[order[parent.first + k]];
    const int o = (double(x.x) >= mid.x ? 4 : 0) | (double(x.y) >= mid.y ? 2 : 0) | (double(x.z) >= mid.z ? 1 : 0);
    oct[k] = std::uint8_t(o);
    ++counts[o];
  }
  std::array<std::int32_t, 8> start{};
  for (int o = 1; o < 8; ++o) start[o] = start[o - 1] + counts[o - 1];
  std::vector<std::int32_t> local(parent.count);
  auto cursor = start;
  for (int k = 0; k < parent.count; ++k) local[cursor[oct[k]]++] = order[parent.first + k];
  std::copy(local.begin(), local.end(), order.begin() + parent.first);

  const int first_daughter = int(tree.cells.size());
  tree.cells[c].first_daughter = first_daughter;
  for (int o = 0; o < 8; ++o) {
    Cell d;
    d.lo = parent.lo + Vec3d{(o & 4) ? half : 0.0, (o & 2) ? half : 0.0, (o & 1) ? half : 0.0};
    d.width = half;
    d.depth = parent.depth + 1;
    d.first = parent.first + start[o];
    d.count = counts[o];
    d.parent = c;
    d.top = parent.top;
    tree.cells.push_back(d);
  }
  for (int o = 0; o < 8; ++o) split_cell(tree, order, ps, first_daughter + o);
}

void propagate_up(CellTree& tree, int c) {
  for (int p = tree.cells[c].parent; p >= 0; p = tree.cells[p].parent) {
    Cell& cp = tree.cells[p];
    cp.h_max = 0.0f;
    cp.dx_max = 0.0f;
    for (int o = 0; o < 8; ++o) {
      cp.h_max = std::max(cp.h_max, tree.cells[cp.first_daughter + o].h_max);
      cp.dx_max = std::max(cp.dx_max, tree.cells[cp.first_daughter + o].dx_max);
    }
  }
}

void mark_dirty(CellTree& tree, int c) {
  tree.cells[c].dirty_sort = (1u << kNumAxes) - 1;
  if (tree.cells[c].split())
    for (int o = 0; o < 8; ++o) mark_dirty(tree, tree.cells[c].first_daughter + o);
}

}  // namespace

const std::array<Vec3<int>, kNumAxes>& pair_axis_offsets() {
  static const auto offs = make_offsets();
  return offs;
}

const std::array<Vec3d, kNumAxes>& pair_axis_units() {
  static const auto units = make_units();
  return units;
}

int axis_for_offset(Vec3<int> o, bool& flipped) {
  const int first = o.x != 0 ? o.x : (o.y != 0 ? o.y : o.z);
  if (first == 0) throw UsageError("pair axis: zero offset");
  flipped = first < 0;
  if (flipped) o = -o;
  const auto& offs = pair_axis_offsets();
  for (int k = 0; k < kNumAxes; ++k)
    if (offs[k] == o) return k;
  throw UsageError("pair axis: offset components must be in {-1,0,1}");
}

int CellTree::top_index(int ix, int iy, int iz) const { return (ix * top_grid + iy) * top_grid + iz; }

Vec3<int> CellTree::top_coords(int top) const {
  return {top / (top_grid * top_grid), (top / top_grid) % top_grid, top % top_grid};
}

int CellTree::max_depth() const {
  int d = 0;
  for (const Cell& c : cells) d = std::max(d, c.depth);
  return d;
}

std::vector<int> CellTree::cells_per_level() const {
  std::vector<int> out(max_depth() + 1, 0);
  for (const Cell& c : cells) ++out[c.depth];
  return out;
}

void CellTree::update_bounds(const ParticleSystem& ps, int c) {
  Cell& cell = cells[c];
  cell.h_max = 0.0f;
  cell.dx_max = 0.0f;
  if (cell.split()) {
    for (int o = 0; o < 8; ++o) {
      update_bounds(ps, cell.first_daughter + o);
      cell.h_max = std::max(cell.h_max, cells[cell.first_daughter + o].h_max);
      cell.dx_max = std::max(cell.dx_max, cells[cell.first_daughter + o].dx_max);
    }
    return;
  }
  const float fbox = float(box);
  for (int i = cell.first; i < cell.first + cell.count; ++i) {
    cell.h_max = std::max(cell.h_max, ps.h[i]);
    cell.dx_max = std::max(cell.dx_max, displacement(ps.x[i], ps.x_build[i], fbox));
  }
}

void CellTree::update_h_max(const ParticleSystem& ps, int c) {
  Cell& cell = cells[c];
  cell.h_max = 0.0f;
  if (cell.split()) {
    for (int o = 0; o < 8; ++o) {
      update_h_max(ps, cell.first_daughter + o);
      cell.h_max = std::max(cell.h_max, cells[cell.first_daughter + o].h_max);
    }
    return;
  }
  for (int i = cell.first; i < cell.first + cell.count; ++i) cell.h_max = std::max(cell.h_max, ps.h[i]);
}

void CellTree::update_all_bounds(const ParticleSystem& ps) {
  for (int t = 0; t < num_top(); ++t) update_bounds(ps, t);
}

void CellTree::sort_subtree(const ParticleSystem& ps, int c) {
  Cell& cell = cells[c];
  if (cell.dirty_sort != 0) {
    const auto& units = pair_axis_units();
    const Vec3d centre = cell.center();
    const float fbox = float(box);
    std::vector<Vec3d> xs(cell.count);
    for (int k = 0; k < cell.count; ++k) xs[k] = unwrap_near(ps.x[cell.first + k], centre, fbox).as<double>();
    for (int axis = 0; axis < kNumAxes; ++axis) {
      if (!(cell.dirty_sort & (1u << axis))) continue;
      auto& list = sorts[c][axis];
      list.resize(cell.count);
      for (int k = 0; k < cell.count; ++k) list[k] = {float(dot(xs[k], units[axis])), cell.first + k};
      std::sort(list.begin(), list.end(), [&](const SortEntry& l, const SortEntry& r) {
        return l.d != r.d ? l.d < r.d : ps.id[l.idx] < ps.id[r.idx];
      });
    }
    cell.dirty_sort = 0;
  }
  if (cell.split())
    for (int o = 0; o < 8; ++o) sort_subtree(ps, cell.first_daughter + o);
}

int CellTree::interaction_level(int c) const {
  std::vector<int> chain;
  for (int p = c; p >= 0; p = cells[p].parent) chain.push_back(p);
  const Cell& top = cells[chain.back()];
  if (!fits(top))
    throw ConfigError(fmt::format(
        "domain too coarse: kernel support {:.4g} (plus drift {:.3g}) exceeds top-level cell width {:.4g}",
        gamma_k * top.h_max, 2.0 * top.dx_max, top.width));
  int level = top.depth;
  for (auto it = chain.rbegin(); it + 1 != chain.rend(); ++it) {
    if (!can_recurse(cells[*it])) break;
    level = cells[*(it + 1)].depth;
  }
  return level;
}

Vec3<int> CellTree::relative_offset(int a, int b, const Vec3f& shift) const {
  const Cell& ca = cells[a];
  const Cell& cb = cells[b];
  const Vec3d delta = cb.center() + shift.as<double>() - ca.center();
  const double tol = 0.25 * std::min(ca.width, cb.width);
  Vec3<int> o;
  for (int k = 0; k < 3; ++k) o[k] = delta[k] > tol ? 1 : (delta[k] < -tol ? -1 : 0);
  return o;
}

bool CellTree::adjacent(int a, int b, const Vec3f& shift) const {
  const Cell& ca = cells[a];
  const Cell& cb = cells[b];
  const Vec3d delta = cb.center() + shift.as<double>() - ca.center();
  const double reach = 0.5 * (ca.width + cb.width);
  const double eps = 1e-9 * box;
  bool touching = false;
  for (int k = 0; k < 3; ++k) {
    const double gap = std::abs(delta[k]) - reach;
    if (gap > eps) return false;
    if (gap > -eps) touching = true;
  }
  return touching;
}

Vec3f CellTree::nearest_shift(int a, int b) const {
  const Vec3d delta = cells[b].center() - cells[a].center();
  Vec3f s;
  for (int k = 0; k < 3; ++k) {
    if (delta[k] > 0.5 * box + 1e-12) s[k] = float(-box);
    else if (delta[k] < -0.5 * box - 1e-12) s[k] = float(box);
  }
  return s;
}

CellTree build_tree(ParticleSystem& ps, int top_grid, int split_threshold, double gamma_k) {
  if (top_grid < 1) throw UsageError("build_tree: top_grid must be >= 1");
  CellTree tree;
  tree.top_grid = top_grid;
  tree.split_threshold = split_threshold;
  tree.box = ps.box;
  tree.gamma_k = gamma_k;

  const int g = top_grid;
  const double w = ps.box / g;
  const std::size_t n = ps.size();
  std::vector<std::int32_t> top_of(n);
  std::vector<std::int32_t> counts(g * g * g, 0);
  for (std::size_t i = 0; i < n; ++i) {
    int c[3];
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(int(std::floor(double(ps.x[i][k]) / w)), 0, g - 1);
    top_of[i] = tree.top_index(c[0], c[1], c[2]);
    ++counts[top_of[i]];
  }
  std::vector<std::int32_t> start(counts.size(), 0);
  for (std::size_t t = 1; t < counts.size(); ++t) start[t] = start[t - 1] + counts[t - 1];
  std::vector<std::int32_t> order(n);
  {
    auto cursor = start;
    for (std::size_t i = 0; i < n; ++i) order[cursor[top_of[i]]++] = std::int32_t(i);
  }
  tree.cells.reserve(counts.size() * 2);
  for (int t = 0; t < g * g * g; ++t) {
    const Vec3<int> ic = tree.top_coords(t);
    Cell c;
    c.lo = {ic.x * w, ic.y * w, ic.z * w};
    c.width = w;
    c.first = start[t];
    c.count = counts[t];
    c.top = t;
    tree.cells.push_back(c);
  }
  for (int t = 0; t < g * g * g; ++t) split_cell(tree, order, ps, t);

  ps.permute(order);
  ps.x_build = ps.x;
  tree.sorts.assign(tree.cells.size(), {});
  tree.update_all_bounds(ps);
  return tree;
}

SortList sort_pair(CellTree& tree, const ParticleSystem& ps, int a, int b) {
  return sort_pair(tree, ps, a, b, tree.nearest_shift(a, b));
}

SortList sort_pair(CellTree& tree, const ParticleSystem& ps, int a, int b, const Vec3f& shift) {
  if (!tree.adjacent(a, b, shift))
    throw UsageError(fmt::format("sort_pair: cells {} and {} are not adjacent", a, b));
  SortList out;
  out.shift = shift;
  out.axis = axis_for_offset(tree.relative_offset(a, b, shift), out.flipped);
  tree.sort_subtree(ps, a);
  tree.sort_subtree(ps, b);
  const double dshift = dot(shift.as<double>(), pair_axis_units()[out.axis]);
  out.a = tree.sorts[a][out.axis];
  out.b = tree.sorts[b][out.axis];
  for (auto& e : out.b) e.d = float(double(e.d) + dshift);
  if (out.flipped) {
    auto by_proj = [&](const SortEntry& l, const SortEntry& r) {
      return l.d != r.d ? l.d < r.d : ps.id[l.idx] < ps.id[r.idx];
    };
    for (auto* list : {&out.a, &out.b}) {
      for (auto& e : *list) e.d = -e.d;
      std::sort(list->begin(), list->end(), by_proj);
    }
  }
  return out;
}

std::span<const SortEntry> sort_window(std::span<const SortEntry> sorted, float d_i, float window) {
  auto lo = std::lower_bound(sorted.begin(), sorted.end(), d_i - window,
                             [](const SortEntry& e, float v) { return e.d < v; });
  auto hi = std::upper_bound(lo, sorted.end(), d_i + window,
                             [](float v, const SortEntry& e) { return v < e.d; });
  return {lo, hi};
}

void drift_positions(CellTree& tree, ParticleSystem& ps, int c, double dt) {
  const Cell& cell = tree.cells[c];
  const float fbox = float(ps.box);
  for (int i = cell.first; i < cell.first + cell.count; ++i) {
    for (int k = 0; k < 3; ++k)
      ps.x[i][k] = wrap_coord(float(double(ps.x[i][k]) + double(ps.v[i][k]) * dt), fbox);
  }
  mark_dirty(tree, c);
  for (int p = tree.cells[c].parent; p >= 0; p = tree.cells[p].parent)
    tree.cells[p].dirty_sort = (1u << kNumAxes) - 1;
  tree.update_bounds(ps, c);
  propagate_up(tree, c);
}

}  // namespace tasksph
