#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "gsstream/rng.hpp"
#include "gsstream/tiling.hpp"

using namespace gsstream;

namespace {

GaussianPrimitive at(double x, double y, double z) {
  GaussianPrimitive g;
  g.position = {x, y, z};
  g.scale = {0.1, 0.1, 0.1};
  g.opacity = 0.8;
  return g;
}

Scene random_scene(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Scene s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(at(rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(0, 3)));
  return s;
}

Tile cell_tile(int cell, double score, std::size_t prims = 1) {
  Tile t;
  t.id = cell;
  t.cells = {cell};
  t.saliency = score;
  for (std::size_t k = 0; k < prims; ++k) t.primitive_ids.push_back(static_cast<std::size_t>(cell) * 100 + k);
  return t;
}

}  // namespace

TEST(UniformPartition, SingleCellHoldsEverything) {
  const Scene s = random_scene(50, 1);
  const auto tiles = uniform_partition(s, {1, 1, 1});
  ASSERT_EQ(tiles.size(), 1u);
  EXPECT_EQ(tiles[0].primitive_ids.size(), 50u);
  for (auto id : tiles[0].primitive_ids) EXPECT_TRUE(tiles[0].bbox.contains(s[id].position));
}

TEST(UniformPartition, TwoSeparatedBlobs) {
  Scene s;
  for (int i = 0; i < 5; ++i) s.push_back(at(-5 + 0.1 * i, 0, 0));
  for (int i = 0; i < 7; ++i) s.push_back(at(5 - 0.1 * i, 0, 0));
  const auto tiles = uniform_partition(s, {2, 1, 1});
  ASSERT_EQ(tiles.size(), 2u);
  EXPECT_EQ(tiles[0].primitive_ids, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(tiles[1].primitive_ids.size(), 7u);
  EXPECT_EQ(tiles[1].id, 1);
}

TEST(UniformPartition, PartitionCoversEveryPrimitiveOnce) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = random_scene(300, seed);
    const auto tiles = uniform_partition(s, {4, 4, 2});
    std::size_t total = 0;
    std::set<std::size_t> seen;
    for (const auto& t : tiles) {
      EXPECT_FALSE(t.primitive_ids.empty());
      total += t.primitive_ids.size();
      seen.insert(t.primitive_ids.begin(), t.primitive_ids.end());
      for (auto id : t.primitive_ids) EXPECT_TRUE(t.bbox.contains(s[id].position));
    }
    EXPECT_EQ(total, s.size());
    EXPECT_EQ(seen.size(), s.size());
  }
}

TEST(UniformPartition, RejectsZeroGrid) {
  const Scene s = random_scene(3, 1);
  EXPECT_THROW(uniform_partition(s, {0, 1, 1}), ValidationError);
  EXPECT_THROW(uniform_partition({}, {1, 1, 1}), ValidationError);
}

TEST(Cluster, TargetEqualToCountIsIdentity) {
  std::vector<Tile> tiles{cell_tile(0, 0.2), cell_tile(1, 0.7), cell_tile(2, 0.4)};
  const auto r = cluster(tiles, {3, 1, 1}, 3);
  ASSERT_EQ(r.tiles.size(), 3u);
  EXPECT_EQ(r.merges, 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.tiles[i].cells, tiles[i].cells);
}

TEST(Cluster, PathGraphMergesClosestScores) {
  std::vector<Tile> tiles{cell_tile(0, 0.9), cell_tile(1, 0.89), cell_tile(2, 0.1)};
  const auto r = cluster(tiles, {3, 1, 1}, 2);
  ASSERT_EQ(r.tiles.size(), 2u);
  EXPECT_EQ(r.tiles[0].cells, (std::vector<int>{0, 1}));
  EXPECT_NEAR(r.tiles[0].saliency, 0.895, 1e-15);
  EXPECT_EQ(r.tiles[1].cells, (std::vector<int>{2}));
}

TEST(Cluster, EqualScoresCollapseToOne) {
  std::vector<Tile> tiles;
  for (int c = 0; c < 8; ++c) tiles.push_back(cell_tile(c, 0.5));
  const auto r = cluster(tiles, {2, 2, 2}, 1);
  ASSERT_EQ(r.tiles.size(), 1u);
  EXPECT_EQ(r.tiles[0].cells.size(), 8u);
  EXPECT_TRUE(r.warning.empty());
}

TEST(Cluster, NonAdjacentTilesNeverMerge) {
  // cells 0 and 2 on a 3x1x1 grid with cell 1 empty
  std::vector<Tile> tiles{cell_tile(0, 0.5), cell_tile(2, 0.5)};
  const auto r = cluster(tiles, {3, 1, 1}, 1);
  EXPECT_EQ(r.tiles.size(), 2u);
  EXPECT_FALSE(r.warning.empty());
}

TEST(Cluster, TieBreaksBySmallerPrimitiveCount) {
  std::vector<Tile> tiles{cell_tile(0, 0.5, 10), cell_tile(1, 0.6, 1), cell_tile(2, 0.7, 1)};
  const auto r = cluster(tiles, {3, 1, 1}, 2);
  EXPECT_EQ(r.tiles[1].cells, (std::vector<int>{1, 2}));
}

TEST(Cluster, RejectsTargetAboveCount) {
  std::vector<Tile> tiles{cell_tile(0, 0.5)};
  EXPECT_THROW(cluster(tiles, {1, 1, 1}, 2), ValidationError);
  EXPECT_THROW(cluster(tiles, {1, 1, 1}, 0), ValidationError);
}

TEST(ClusterProperty, MergesOnlyAdjacentAndStepsByOne) {
  Rng rng(4);
  const GridSpec grid{4, 4, 2};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Tile> tiles;
    for (int c = 0; c < grid.cells(); ++c)
      if (rng.uniform() < 0.9) tiles.push_back(cell_tile(c, rng.uniform(), 1 + rng.index(5)));
    const int target = 1 + static_cast<int>(rng.index(tiles.size()));
    const auto r = cluster(tiles, grid, target);
    EXPECT_EQ(static_cast<int>(tiles.size()) - r.merges, static_cast<int>(r.tiles.size()));
    if (r.warning.empty()) {
      EXPECT_EQ(static_cast<int>(r.tiles.size()), target);
    }
    std::set<int> cells;
    for (const auto& t : r.tiles) {
      cells.insert(t.cells.begin(), t.cells.end());
      // every cluster's cells form a face-connected set
      std::set<int> reached{t.cells[0]};
      bool grew = true;
      while (grew) {
        grew = false;
        for (int c : t.cells)
          if (!reached.count(c))
            for (int d : reached)
              if (grid.face_adjacent(c, d)) {
                reached.insert(c);
                grew = true;
                break;
              }
      }
      EXPECT_EQ(reached.size(), t.cells.size());
    }
    EXPECT_EQ(cells.size(), tiles.size());
  }
}

TEST(MatchTiles, IdenticalGofsPairIdentically) {
  const Scene s = random_scene(100, 2);
  auto tiles = uniform_partition(s, {2, 2, 1});
  for (std::size_t i = 0; i < tiles.size(); ++i) tiles[i].saliency = 0.1 * static_cast<double>(i);
  const auto m = match_tiles(tiles, s, tiles, s);
  ASSERT_EQ(m.pairs.size(), tiles.size());
  for (const auto& [i, j] : m.pairs) EXPECT_EQ(i, j);
  EXPECT_TRUE(m.vanished.empty());
}

TEST(MatchTiles, ClosestScoresPair) {
  Scene s{at(0, 0, 0), at(1, 0, 0)};
  std::vector<Tile> a{cell_tile(0, 0.1), cell_tile(1, 0.9)};
  std::vector<Tile> b{cell_tile(0, 0.88), cell_tile(1, 0.12)};
  for (auto* v : {&a, &b})
    for (std::size_t i = 0; i < v->size(); ++i) (*v)[i].primitive_ids = {i};
  const auto m = match_tiles(a, s, b, s);
  // assignment A: |0.1-0.88|+|0.9-0.12| = 1.56, assignment B: 0.02+0.02 = 0.04
  ASSERT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{0, 1}));
  EXPECT_EQ(m.pairs[1], (std::pair<std::size_t, std::size_t>{1, 0}));
}

TEST(MatchTiles, UnequalCountsFormMinPairs) {
  Scene s{at(0, 0, 0), at(1, 0, 0), at(2, 0, 0)};
  std::vector<Tile> a{cell_tile(0, 0.1), cell_tile(1, 0.5), cell_tile(2, 0.9)};
  for (std::size_t i = 0; i < 3; ++i) a[i].primitive_ids = {i};
  std::vector<Tile> b{a[2]};
  const auto m = match_tiles(a, s, b, s);
  EXPECT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.vanished.size(), 2u);
  const auto m2 = match_tiles(b, s, a, s);
  EXPECT_EQ(m2.appeared.size(), 2u);
}

TEST(MatchTilesProperty, InjectiveAndNoWorseThanReversedGreedy) {
  Rng rng(6);
  Scene s;
  for (int i = 0; i < 20; ++i) s.push_back(at(i, 0, 0));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tile> a, b;
    const std::size_t na = 1 + rng.index(8), nb = 1 + rng.index(8);
    for (std::size_t i = 0; i < na; ++i) a.push_back(cell_tile(0, rng.uniform())), a.back().primitive_ids = {i};
    for (std::size_t j = 0; j < nb; ++j) b.push_back(cell_tile(0, rng.uniform())), b.back().primitive_ids = {j};
    const auto m = match_tiles(a, s, b, s);
    EXPECT_EQ(m.pairs.size(), std::min(na, nb));
    std::set<std::size_t> ua, ub;
    double greedy = 0;
    for (const auto& [i, j] : m.pairs) {
      EXPECT_TRUE(ua.insert(i).second);
      EXPECT_TRUE(ub.insert(j).second);
      greedy += std::abs(a[i].saliency - b[j].saliency);
    }
    // reversed-order greedy: largest differences claimed first
    std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
    for (std::size_t i = 0; i < na; ++i)
      for (std::size_t j = 0; j < nb; ++j) cand.emplace_back(std::abs(a[i].saliency - b[j].saliency), i, j);
    std::sort(cand.rbegin(), cand.rend());
    std::vector<bool> ra(na), rb(nb);
    double reversed = 0;
    for (const auto& [d, i, j] : cand)
      if (!ra[i] && !rb[j]) ra[i] = rb[j] = true, reversed += d;
    EXPECT_LE(greedy, reversed + 1e-12);
  }
}

TEST(ClassifyMotion, ThresholdRule) {
  const MotionThresholds th{0.01, 0.5};
  EXPECT_EQ(classify_displacement(Vec3::Zero(), th), MotionClass::Static);
  EXPECT_EQ(classify_displacement({0.01, 0, 0}, th), MotionClass::Static);
  EXPECT_EQ(classify_displacement({0.3, 0.4, 0}, th), MotionClass::LowDynamic);  // norm exactly 0.5
  EXPECT_EQ(classify_displacement({0, 0.51, 0}, th), MotionClass::HighDynamic);
}

TEST(ClassifyMotion, OrbitingBlobIsHighDynamic) {
  // Blob centered at radius r on the x axis rotated about z by theta: centroid shift 2 r sin(theta/2).
  Scene a, b;
  Rng rng(9);
  const double r = 2.0, theta = 0.2;
  for (int i = 0; i < 40; ++i) {
    const Vec3 p(r + rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    a.push_back(at(p.x(), p.y(), p.z()));
    const Vec3 q = Eigen::AngleAxisd(theta, Vec3::UnitZ()) * p;
    b.push_back(at(q.x(), q.y(), q.z()));
  }
  std::vector<Tile> ta = uniform_partition(a, {1, 1, 1}), tb = uniform_partition(b, {1, 1, 1});
  const auto m = match_tiles(ta, a, tb, b);
  const double shift = (centroid(tb[0], b) - centroid(ta[0], a)).norm();
  EXPECT_NEAR(shift, (Eigen::AngleAxisd(theta, Vec3::UnitZ()) * centroid(ta[0], a) - centroid(ta[0], a)).norm(), 1e-12);
  const double diag = shift / 0.1;  // the shift is 0.1 diagonals
  const auto rec = classify_motion(ta, a, tb, b, m, MotionThresholds::for_diagonal(diag));
  EXPECT_EQ(rec[0].motion_class, MotionClass::HighDynamic);
}

TEST(ClassifyMotion, UnmatchedTileIsHighDynamic) {
  Scene s{at(0, 0, 0)};
  std::vector<Tile> a{cell_tile(0, 0.5)};
  a[0].primitive_ids = {0};
  const auto rec = classify_motion(a, s, {}, s, match_tiles(a, s, {}, s), {0.1, 1.0});
  EXPECT_EQ(rec[0].motion_class, MotionClass::HighDynamic);
}

TEST(GroupLowDynamic, SimilarityExamples) {
  EXPECT_DOUBLE_EQ(motion_similarity({1, 0, 0}, {2, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(motion_similarity({1, 0, 0}, {0, 1, 0}), 0.0);
  EXPECT_NEAR(motion_similarity({1, 0, 0}, {std::cos(std::numbers::pi / 6), std::sin(std::numbers::pi / 6), 0}),
              std::sqrt(3.0) / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(motion_similarity(Vec3::Zero(), Vec3::Zero()), 1.0);
  EXPECT_DOUBLE_EQ(motion_similarity(Vec3::Zero(), {1, 0, 0}), 0.0);
}

TEST(GroupLowDynamic, GroupsAdjacentAlignedTiles) {
  const GridSpec grid{3, 1, 1};
  std::vector<Tile> tiles{cell_tile(0, 0), cell_tile(1, 0), cell_tile(2, 0)};
  auto rec = [](std::size_t t, Vec3 d) {
    MotionRecord r;
    r.tile = t;
    r.displacement = d;
    r.motion_class = MotionClass::LowDynamic;
    return r;
  };
  const double c30 = std::cos(std::numbers::pi / 6), s30 = std::sin(std::numbers::pi / 6);
  std::vector<MotionRecord> same{rec(0, {1, 0, 0}), rec(1, {1, 0, 0}), rec(2, {0, 1, 0})};
  EXPECT_EQ(group_low_dynamic(same, tiles, grid, 0.9), 2);
  EXPECT_EQ(same[0].group, same[1].group);
  EXPECT_NE(same[1].group, same[2].group);
  std::vector<MotionRecord> rotated{rec(0, {1, 0, 0}), rec(1, {c30, s30, 0})};
  EXPECT_EQ(group_low_dynamic(rotated, tiles, grid, 0.9), 2);
  // non-adjacent tiles never share a group even with identical motion
  std::vector<MotionRecord> apart{rec(0, {1, 0, 0}), rec(2, {1, 0, 0})};
  EXPECT_EQ(group_low_dynamic(apart, tiles, grid, 0.9), 2);
  std::vector<MotionRecord> mixed{rec(0, {1, 0, 0}), rec(1, {1, 0, 0})};
  mixed[1].motion_class = MotionClass::HighDynamic;
  EXPECT_EQ(group_low_dynamic(mixed, tiles, grid, 0.9), 1);
  EXPECT_EQ(mixed[1].group, -1);
}
