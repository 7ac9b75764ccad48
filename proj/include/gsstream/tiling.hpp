#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/ladder.hpp"
#include "gsstream/primitive.hpp"

namespace gsstream {

struct GridSpec {
  int nx = 4;
  int ny = 4;
  int nz = 2;

  int cells() const { return nx * ny * nz; }
  int index(int ix, int iy, int iz) const { return ix + nx * (iy + ny * iz); }
  std::array<int, 3> coords(int cell) const { return {cell % nx, (cell / nx) % ny, cell / (nx * ny)}; }

  void validate() const { require(nx > 0 && ny > 0 && nz > 0, "grid dimensions must be positive"); }

  bool face_adjacent(int a, int b) const {
    const auto ca = coords(a), cb = coords(b);
    return std::abs(ca[0] - cb[0]) + std::abs(ca[1] - cb[1]) + std::abs(ca[2] - cb[2]) == 1;
  }
};

/// Grid cell of a position inside `bounds`; points on the upper face fall into the last cell.
inline int cell_of(const Vec3& p, const Box& bounds, const GridSpec& grid) {
  const Vec3 u = bounds.to_unit(p);
  const int n[3] = {grid.nx, grid.ny, grid.nz};
  int c[3];
  for (int a = 0; a < 3; ++a) c[a] = std::clamp(static_cast<int>(std::floor(u[a] * n[a])), 0, n[a] - 1);
  return grid.index(c[0], c[1], c[2]);
}

/// Assigns every primitive to one grid cell over `bounds` (scene bbox when unset).
/// Tile ids are linear cell indices so that co-located tiles share ids across GoFs.
inline std::vector<Tile> uniform_partition(const Scene& scene, const GridSpec& grid, int gof_index = 0,
                                           std::optional<Box> bounds = std::nullopt) {
  grid.validate();
  require(!scene.empty(), "uniform_partition: empty scene");
  const Box box = bounds ? *bounds : bounding_box(scene);
  std::vector<Tile> cells(static_cast<std::size_t>(grid.cells()));
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const int c = cell_of(scene[i].position, box, grid);
    auto& t = cells[static_cast<std::size_t>(c)];
    t.primitive_ids.push_back(i);
    t.bbox.extend(scene[i].position);
  }
  std::vector<Tile> tiles;
  for (int c = 0; c < grid.cells(); ++c) {
    auto& t = cells[static_cast<std::size_t>(c)];
    if (t.primitive_ids.empty()) continue;
    t.id = c;
    t.gof_index = gof_index;
    t.cells = {c};
    tiles.push_back(std::move(t));
  }
  return tiles;
}

inline bool tiles_adjacent(const Tile& a, const Tile& b, const GridSpec& grid) {
  for (int ca : a.cells)
    for (int cb : b.cells)
      if (grid.face_adjacent(ca, cb)) return true;
  return false;
}

struct ClusterResult {
  std::vector<Tile> tiles;
  int merges = 0;
  std::string warning;  // set when the adjacency graph could not reach the target count
};

/// Greedy agglomerative merging of face-adjacent tiles with the closest scores.
/// Tiles must carry `saliency` and `cells`. A merged tile keeps the smaller id and
/// the mean score of its member cells.
inline ClusterResult cluster(const std::vector<Tile>& tiles, const GridSpec& grid, int target_count) {
  require(target_count >= 1, "cluster: target_count must be >= 1");
  require(static_cast<std::size_t>(target_count) <= tiles.size(),
          "cluster: target_count " + std::to_string(target_count) + " exceeds initial tile count " +
              std::to_string(tiles.size()));
  ClusterResult res;
  res.tiles = tiles;
  auto& cur = res.tiles;
  while (static_cast<int>(cur.size()) > target_count) {
    std::optional<std::tuple<double, std::size_t, int, int, std::size_t, std::size_t>> best;
    for (std::size_t i = 0; i < cur.size(); ++i)
      for (std::size_t j = i + 1; j < cur.size(); ++j) {
        if (!tiles_adjacent(cur[i], cur[j], grid)) continue;
        const int lo_id = std::min(cur[i].id, cur[j].id), hi_id = std::max(cur[i].id, cur[j].id);
        const auto key = std::make_tuple(std::abs(cur[i].saliency - cur[j].saliency),
                                         cur[i].primitive_ids.size() + cur[j].primitive_ids.size(), lo_id, hi_id, i, j);
        if (!best || key < *best) best = key;
      }
    if (!best) {
      res.warning = "tile graph is disconnected; stopped at " + std::to_string(cur.size()) + " clusters (target " +
                    std::to_string(target_count) + ")";
      break;
    }
    const std::size_t i = std::get<4>(*best), j = std::get<5>(*best);
    Tile& a = cur[i];
    Tile& b = cur[j];
    const double na = static_cast<double>(a.cells.size()), nb = static_cast<double>(b.cells.size());
    a.saliency = (na * a.saliency + nb * b.saliency) / (na + nb);
    a.id = std::min(a.id, b.id);
    a.bbox.extend(b.bbox);
    a.primitive_ids.insert(a.primitive_ids.end(), b.primitive_ids.begin(), b.primitive_ids.end());
    std::sort(a.primitive_ids.begin(), a.primitive_ids.end());
    a.cells.insert(a.cells.end(), b.cells.begin(), b.cells.end());
    std::sort(a.cells.begin(), a.cells.end());
    cur.erase(cur.begin() + static_cast<std::ptrdiff_t>(j));
    ++res.merges;
  }
  std::sort(cur.begin(), cur.end(), [](const Tile& x, const Tile& y) { return x.id < y.id; });
  return res;
}

struct TileMatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (index in a, index in b)
  std::vector<std::size_t> vanished;                        // unmatched in a
  std::vector<std::size_t> appeared;                        // unmatched in b
};

/// Greedy one-to-one pairing by ascending score difference, then centroid distance.
inline TileMatch match_tiles(const std::vector<Tile>& a, const Scene& scene_a, const std::vector<Tile>& b,
                             const Scene& scene_b) {
  std::vector<std::tuple<double, double, std::size_t, std::size_t>> cand;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec3 ca = centroid(a[i], scene_a);
    for (std::size_t j = 0; j < b.size(); ++j)
      cand.emplace_back(std::abs(a[i].saliency - b[j].saliency), (centroid(b[j], scene_b) - ca).norm(), i, j);
  }
  std::sort(cand.begin(), cand.end());
  std::vector<bool> used_a(a.size()), used_b(b.size());
  TileMatch m;
  for (const auto& [ds, dist, i, j] : cand) {
    if (used_a[i] || used_b[j]) continue;
    used_a[i] = used_b[j] = true;
    m.pairs.emplace_back(i, j);
  }
  std::sort(m.pairs.begin(), m.pairs.end());
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!used_a[i]) m.vanished.push_back(i);
  for (std::size_t j = 0; j < b.size(); ++j)
    if (!used_b[j]) m.appeared.push_back(j);
  return m;
}

struct MotionThresholds {
  double static_eps = 0.0;
  double high_eps = 0.0;

  static MotionThresholds for_diagonal(double diagonal, double static_frac = 0.001, double high_frac = 0.05) {
    return {static_frac * diagonal, high_frac * diagonal};
  }
};

inline MotionClass classify_displacement(const Vec3& d, const MotionThresholds& th) {
  const double n = d.norm();
  if (n <= th.static_eps) return MotionClass::Static;
  if (n <= th.high_eps) return MotionClass::LowDynamic;
  return MotionClass::HighDynamic;
}

struct MotionRecord {
  std::size_t tile = 0;  // index into the GoF's tile list
  Vec3 displacement = Vec3::Zero();
  MotionClass motion_class = MotionClass::Static;
  int group = -1;  // shared-field group for LowDynamic tiles
};

/// Displacement of each matched tile is centroid(t+1) - centroid(t). Tiles with no
/// successor are classified HighDynamic so they receive a dedicated field.
inline std::vector<MotionRecord> classify_motion(const std::vector<Tile>& a, const Scene& scene_a,
                                                 const std::vector<Tile>& b, const Scene& scene_b,
                                                 const TileMatch& match, const MotionThresholds& th) {
  std::vector<MotionRecord> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i].tile = i;
    out[i].motion_class = MotionClass::HighDynamic;
    out[i].displacement = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
  }
  for (const auto& [i, j] : match.pairs) {
    out[i].displacement = centroid(b[j], scene_b) - centroid(a[i], scene_a);
    out[i].motion_class = classify_displacement(out[i].displacement, th);
  }
  return out;
}

/// Cosine similarity with the zero-vector convention: two zero vectors are
/// fully similar, a zero and a non-zero vector are not.
inline double motion_similarity(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

/// Unions adjacent LowDynamic tiles whose motion similarity is at least tau.
/// Group ids are dense, ordered by the smallest member index. Returns the group count.
inline int group_low_dynamic(std::vector<MotionRecord>& records, const std::vector<Tile>& tiles, const GridSpec& grid,
                             double tau) {
  std::vector<std::size_t> parent(records.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].motion_class != MotionClass::LowDynamic) continue;
    for (std::size_t j = i + 1; j < records.size(); ++j) {
      if (records[j].motion_class != MotionClass::LowDynamic) continue;
      if (!tiles_adjacent(tiles.at(records[i].tile), tiles.at(records[j].tile), grid)) continue;
      if (motion_similarity(records[i].displacement, records[j].displacement) < tau) continue;
      const auto ri = find(i), rj = find(j);
      if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
    }
  }
  std::vector<int> group_of_root(records.size(), -1);
  int groups = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].motion_class != MotionClass::LowDynamic) {
      records[i].group = -1;
      continue;
    }
    auto& g = group_of_root[find(i)];
    if (g < 0) g = groups++;
    records[i].group = g;
  }
  return groups;
}

}  // namespace gsstream
