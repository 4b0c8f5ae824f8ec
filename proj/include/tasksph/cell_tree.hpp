#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tasksph/common.hpp"
#include "tasksph/particles.hpp"

namespace tasksph {

inline constexpr int kNumAxes = 13;

struct Cell {
  Vec3d lo;
  double width = 0.0;
  int depth = 0;
  std::int32_t first = 0;
  std::int32_t count = 0;
  std::int32_t parent = -1;
  std::int32_t first_daughter = -1;  // eight consecutive cells, or -1 for a leaf
  std::int32_t top = -1;             // top-level ancestor (self for top cells)
  float h_max = 0.0f;
  float dx_max = 0.0f;  // largest displacement of a contained particle since the build
  std::uint16_t dirty_sort = (1u << kNumAxes) - 1;

  bool split() const { return first_daughter >= 0; }
  Vec3d center() const { return lo + Vec3d{width, width, width} * 0.5; }
};

struct SortEntry {
  float d;
  std::int32_t idx;
};

struct SortList {
  int axis = 0;           // canonical axis id
  bool flipped = false;   // the a->b direction is minus the canonical axis
  Vec3f shift;            // periodic offset applied to cell b
  std::vector<SortEntry> a, b;  // projections onto the a->b unit vector, ascending
};

// Canonical neighbour directions: offsets in {-1,0,1}^3 whose first non-zero
// component is positive, in lexicographic order.
const std::array<Vec3<int>, kNumAxes>& pair_axis_offsets();
const std::array<Vec3d, kNumAxes>& pair_axis_units();
// Returns the canonical axis for a non-zero offset and whether it is reversed.
int axis_for_offset(Vec3<int> o, bool& flipped);

// Move x (wrapped) to the periodic image closest to `ref`.
inline float unwrap_near(float x, float ref, float box) {
  const float half = 0.5f * box;
  if (x - ref > half) return x - box;
  if (x - ref < -half) return x + box;
  return x;
}

inline Vec3f unwrap_near(const Vec3f& x, const Vec3d& ref, float box) {
  return {unwrap_near(x.x, float(ref.x), box), unwrap_near(x.y, float(ref.y), box),
          unwrap_near(x.z, float(ref.z), box)};
}

class CellTree {
 public:
  int top_grid = 1;
  int split_threshold = 64;
  double box = 1.0;
  double gamma_k = 2.0;
  std::vector<Cell> cells;  // top cells first, index (ix * g + iy) * g + iz
  std::vector<std::array<std::vector<SortEntry>, kNumAxes>> sorts;

  int num_top() const { return top_grid * top_grid * top_grid; }
  int top_index(int ix, int iy, int iz) const;
  Vec3<int> top_coords(int top) const;
  int max_depth() const;
  std::vector<int> cells_per_level() const;

  // gamma_k h_max plus twice the drift since the build must fit inside the cell.
  bool fits(const Cell& c) const { return gamma_k * c.h_max + 2.0 * c.dx_max <= c.width; }
  // Daughters are valid interaction cells, judged on this cell's maxima.
  bool can_recurse(const Cell& c) const {
    return c.split() && gamma_k * c.h_max + 2.0 * c.dx_max <= 0.5 * c.width;
  }
  // Recursion test used when a step's interactions are planned: h_max and the
  // drift bound are inflated by what the step may still add to them.
  double plan_h_factor = 1.0;
  double plan_dx_pad = 0.0;
  bool plan_recurse(const Cell& c) const {
    return c.split() && gamma_k * plan_h_factor * c.h_max + 2.0 * (c.dx_max + plan_dx_pad) <= 0.5 * c.width;
  }

  // Recompute h_max and dx_max for the subtree rooted at `cell`, bottom-up.
  void update_bounds(const ParticleSystem& ps, int cell);
  void update_all_bounds(const ParticleSystem& ps);
  // h_max only; leaves the drift bound untouched.
  void update_h_max(const ParticleSystem& ps, int cell);

  // Refresh the per-axis sorted projections of every dirty cell in the subtree.
  void sort_subtree(const ParticleSystem& ps, int cell);
  bool sorted(int cell) const { return cells[cell].dirty_sort == 0; }

  // Depth at which interactions involving `cell` are generated.
  int interaction_level(int cell) const;

  // Offset of the cell centres, in units of cell width, after the shift.
  Vec3<int> relative_offset(int a, int b, const Vec3f& shift) const;
  bool adjacent(int a, int b, const Vec3f& shift) const;
  // Minimum-image shift placing b next to a.
  Vec3f nearest_shift(int a, int b) const;
};

CellTree build_tree(ParticleSystem& ps, int top_grid, int split_threshold, double gamma_k);

SortList sort_pair(CellTree& tree, const ParticleSystem& ps, int a, int b);
SortList sort_pair(CellTree& tree, const ParticleSystem& ps, int a, int b, const Vec3f& shift);

// Candidate neighbours of one particle from a sorted cell array: every entry with
// |d - d_i| <= window (projections already include any periodic shift).
std::span<const SortEntry> sort_window(std::span<const SortEntry> sorted, float d_i, float window);

void drift_positions(CellTree& tree, ParticleSystem& ps, int cell, double dt);

}  // namespace tasksph
