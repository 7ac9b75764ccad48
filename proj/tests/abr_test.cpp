#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gsstream/abr.hpp"
#include "gsstream/rng.hpp"

using namespace gsstream;

namespace {

TileQoEInputs tile(double phi_v, double psi_v, double scale = 1.0, bool visible = true) {
  TileQoEInputs t;
  t.visible = visible;
  t.phi = phi_v;
  t.psi = psi_v;
  for (int r = 0; r < kQualityLevels; ++r) {
    t.psnr[r] = r == 0 ? 100.0 : 40.0 - 4 * r;
    t.ssim[r] = 1.0 - 0.05 * r;
    t.primitives[r] = scale * 10000.0 * std::pow(0.6, r);
    t.size_reconstructed[r] = 236.0 * t.primitives[r] * 30;
    t.size_encoded[r] = 236.0 * t.primitives[r] + 64;
    t.decode_s[r] = 0.033 * t.primitives[r] / 10000.0;
  }
  return t;
}

GofProblem problem(std::vector<TileQoEInputs> tiles, double bytes_per_s, double buffer = 0.0) {
  GofProblem p;
  p.tiles = std::move(tiles);
  p.bytes_per_s = bytes_per_s;
  p.buffer_s = buffer;
  return p;
}

GofProblem random_problem(Rng& rng, int tiles, int levels) {
  GofProblem p;
  p.levels = levels;
  p.buffer_s = rng.uniform(0.0, 3.0);
  for (int k = 0; k < tiles; ++k) {
    auto t = tile(rng.uniform(0.05, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 2.0), rng.uniform() < 0.85);
    for (auto& d : t.decode_s) d *= rng.uniform(1.0, 60.0);
    p.tiles.push_back(t);
  }
  p.bytes_per_s = rng.uniform(0.0, 3.0) * tile(1, 1).size_encoded[0] * tiles;
  return p;
}

}  // namespace

TEST(Feasible, EmptyVisibleSetHasFullSlack) {
  auto p = problem({tile(0.5, 0.5, 1.0, false)}, 1000.0);
  const auto f = feasible(p, empty_decision(1));
  EXPECT_TRUE(f.ok);
  EXPECT_DOUBLE_EQ(f.slack, 1000.0);
}

TEST(Feasible, BoundaryInclusiveAndOneByteOver) {
  auto t = tile(0.5, 0.5);
  const Decision d{{TileAction{true, true, 2}}};
  auto p = problem({t}, t.size_encoded[2]);
  auto f = feasible(p, d);
  EXPECT_TRUE(f.ok);
  EXPECT_EQ(f.slack, 0.0);
  p.bytes_per_s = t.size_encoded[2] - 1.0;
  f = feasible(p, d);
  EXPECT_FALSE(f.ok);
  EXPECT_DOUBLE_EQ(f.slack, -1.0);
}

TEST(Feasible, BudgetScalesWithGofDuration) {
  auto t = tile(0.5, 0.5);
  auto p = problem({t}, t.size_encoded[0] / 2.0);
  const Decision d{{TileAction{true, true, 0}}};
  EXPECT_FALSE(feasible(p, d).ok);
  p.cfg.gof_seconds = 2.0;
  EXPECT_TRUE(feasible(p, d).ok);
}

TEST(Feasible, RejectsLevelsBeyondUsableDepth) {
  auto p = problem({tile(0.5, 0.5)}, 1e12);
  p.levels = 2;
  EXPECT_TRUE(feasible(p, Decision{{TileAction{true, false, 1}}}).ok);
  EXPECT_FALSE(feasible(p, Decision{{TileAction{true, false, 2}}}).ok);
}

TEST(EvaluateGof, HandChain) {
  // one encoded tile, 1000 bytes at 2000 B/s, decode 0.2 s on 4 cores
  TileQoEInputs t = tile(0.5, 0.8);
  t.size_encoded[1] = 1000.0;
  t.decode_s[1] = 0.8;
  t.psnr[1] = 30.0;
  t.ssim[1] = 0.9;
  auto p = problem({t}, 2000.0, 0.0);
  const auto o = evaluate_gof(p, Decision{{TileAction{true, true, 1}}});
  EXPECT_DOUBLE_EQ(o.transmit.encoded, 0.5);
  EXPECT_DOUBLE_EQ(o.decode_s, 0.2);
  EXPECT_DOUBLE_EQ(o.ready_s, 0.7);
  EXPECT_EQ(o.stall.event, 0);
  EXPECT_NEAR(o.stall.buffer, 0.3, 1e-12);
  EXPECT_NEAR(o.qoe, 0.5 * 30.0 * 0.5 + 0.5 * 0.9 * 0.5 * 0.8, 1e-12);
  EXPECT_DOUBLE_EQ(o.bytes, 1000.0);
}

TEST(Greedy, UnlimitedBandwidthSaturates) {
  auto p = problem({tile(0.6, 0.5), tile(0.3, 0.9, 0.5), tile(0.2, 0.4, 1.0, false)}, 1e15, 0.0);
  const auto g = greedy_baseline(p);
  EXPECT_TRUE(g.unaffordable.empty());
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_TRUE(g.decision.tiles[k].transmit);
    EXPECT_EQ(g.decision.tiles[k].level, 0);
  }
  EXPECT_FALSE(g.decision.tiles[2].transmit);
  EXPECT_EQ(evaluate_gof(p, g.decision).stall.event, 0);
}

TEST(Greedy, ZeroBandwidthTransmitsNothing) {
  auto p = problem({tile(0.6, 0.5), tile(0.3, 0.9)}, 0.0);
  const auto g = greedy_baseline(p);
  EXPECT_EQ(g.decision, empty_decision(2));
  EXPECT_EQ(g.unaffordable, (std::vector<std::size_t>{0, 1}));
}

TEST(Greedy, TwoTileTwoLevelKnapsackMatchesExhaustive) {
  // budget admits one tile at the top level or both at the lower level
  auto a = tile(0.9, 0.9);
  auto b = tile(0.4, 0.5);
  auto p = problem({a, b}, a.size_encoded[0] + 1000.0, 1.0);
  p.levels = 2;
  const auto g = greedy_baseline(p).decision;
  const auto e = exhaustive_best(p);
  EXPECT_TRUE(feasible(p, g).ok);
  EXPECT_DOUBLE_EQ(planning_qoe(p, g), planning_qoe(p, e));
  EXPECT_EQ(e.tiles[0], (TileAction{true, true, 0}));
}

TEST(Greedy, AlwaysFeasibleAndDeterministic) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_problem(rng, 1 + i % 4, 1 + i % 5);
    const auto g = greedy_baseline(p);
    EXPECT_TRUE(feasible(p, g.decision).ok);
    EXPECT_EQ(g.decision, greedy_baseline(p).decision);
    for (std::size_t k = 0; k < p.tiles.size(); ++k) {
      if (!p.tiles[k].visible) {
        EXPECT_FALSE(g.decision.tiles[k].transmit);
      }
    }
  }
}

TEST(Greedy, BetweenEmptyAndExhaustive) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_problem(rng, 1 + i % 3, 5);
    const double g = planning_qoe(p, greedy_baseline(p).decision);
    EXPECT_GE(g, planning_qoe(p, empty_decision(p.tiles.size())) - 1e-9);
    EXPECT_LE(g, planning_qoe(p, exhaustive_best(p)) + 1e-9);
  }
}

TEST(Exhaustive, HandOptimumSingleTile) {
  auto t = tile(0.5, 0.5);
  auto p = problem({t}, t.size_encoded[1], 3.0);
  const auto e = exhaustive_best(p);
  EXPECT_EQ(e.tiles[0], (TileAction{true, true, 1}));
}

TEST(BufferBaseline, ThresholdLevels) {
  auto p = problem({tile(0.5, 0.5), tile(0.5, 0.5)}, 1e15);
  p.buffer_s = 0.5;
  EXPECT_EQ(buffer_baseline(p).tiles[0], (TileAction{true, true, 4}));
  p.buffer_s = 1.5;
  EXPECT_EQ(buffer_baseline(p).tiles[1], (TileAction{true, true, 2}));
  p.buffer_s = 2.5;
  EXPECT_EQ(buffer_baseline(p).tiles[0], (TileAction{true, true, 0}));
}

TEST(BufferBaseline, ReconstructedWhenDecodeOverloadsCores) {
  auto t = tile(0.5, 0.5);
  t.decode_s[0] = 5.0;  // beyond 4 cores * 1 s
  auto p = problem({t}, 1e15, 2.5);
  EXPECT_EQ(buffer_baseline(p).tiles[0], (TileAction{true, false, 0}));
}

TEST(BufferBaseline, ProjectedOntoBudget) {
  auto t = tile(0.5, 0.5);
  auto p = problem({t, t}, t.size_encoded[0], 2.5);
  EXPECT_TRUE(feasible(p, buffer_baseline(p)).ok);
}

TEST(Projection, FeasibleDecisionUnchanged) {
  auto t = tile(0.5, 0.5);
  auto p = problem({t, t}, 1e12);
  const Decision d{{TileAction{true, false, 1}, TileAction{true, true, 0}}};
  EXPECT_EQ(project_feasible(p, d), d);
}

TEST(Projection, OneLevelOverTakesExactlyOneDowngrade) {
  auto t = tile(0.5, 0.5);
  const Decision d{{TileAction{true, true, 1}, TileAction{true, true, 1}}};
  auto p = problem({t, t}, t.size_encoded[1] + t.size_encoded[2]);
  const auto out = project_feasible(p, d);
  EXPECT_TRUE(feasible(p, out).ok);
  int changed = 0;
  for (std::size_t k = 0; k < 2; ++k) {
    if (out.tiles[k] == d.tiles[k]) continue;
    ++changed;
    EXPECT_EQ(out.tiles[k], (TileAction{true, true, 2}));
  }
  EXPECT_EQ(changed, 1);
}

TEST(Projection, ZeroBudgetSkipsAll) {
  auto t = tile(0.5, 0.5);
  auto p = problem({t, t, t}, 0.0);
  const Decision d{{TileAction{true, true, 0}, TileAction{true, false, 3}, TileAction{true, true, 4}}};
  EXPECT_EQ(project_feasible(p, d), empty_decision(3));
}

TEST(Projection, RandomDecisionsBecomeFeasible) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto p = random_problem(rng, 1 + i % 6, 5);
    Decision d = empty_decision(p.tiles.size());
    for (auto& a : d.tiles) a = TileAction{rng.uniform() < 0.8, rng.uniform() < 0.5, static_cast<int>(rng.index(5))};
    const auto out = project_feasible(p, d);
    EXPECT_TRUE(feasible(p, out).ok);
    EXPECT_TRUE(selector_valid(out));
  }
}

TEST(BuildState, SessionStartIsZeroPadded) {
  const auto s = build_state(SessionHistory{}, {}, 3.0);
  for (double v : s.global_features()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(s.saliency.empty());
}

TEST(BuildState, ConstantBandwidthHasZeroVariance) {
  SessionHistory h;
  h.bandwidth_mbps = {60, 60, 60, 60, 60, 60};
  const auto s = build_state(h, {}, 3.0);
  EXPECT_DOUBLE_EQ(s.bandwidth[0], 60.0 / 1200.0);
  EXPECT_DOUBLE_EQ(s.bandwidth[1], 60.0 / 1200.0);
  EXPECT_EQ(s.bandwidth[2], 0.0);
}

TEST(BuildState, WindowedStatistics) {
  SessionHistory h;
  h.bandwidth_mbps = {1000, 0, 120, 240, 360, 480};  // window keeps the last five
  const auto s = build_state(h, {}, 3.0);
  EXPECT_DOUBLE_EQ(s.bandwidth[0], 0.4);
  EXPECT_DOUBLE_EQ(s.bandwidth[1], 0.2);
  EXPECT_NEAR(s.bandwidth[2], 28800.0 / (1200.0 * 1200.0), 1e-15);
}

TEST(BuildState, TrajectoryNewestLastAndClamped) {
  SessionHistory h;
  Camera a, b;
  a.position = {1.0, 0.0, 0.0};
  b.position = {20.0, -2.5, 0.0};
  b.yaw = std::numbers::pi / 2;
  h.poses = {a, b};
  h.buffer_s = 1.5;
  h.max_displacement = 4.0;
  const auto s = build_state(h, std::vector<double>{0.3, 2.0}, 3.0);
  EXPECT_EQ(s.trajectory[18], 0.2);
  EXPECT_EQ(s.trajectory[24], 1.0);
  EXPECT_EQ(s.trajectory[25], -0.5);
  EXPECT_DOUBLE_EQ(s.trajectory[28], 0.5);
  for (int i = 0; i < 18; ++i) EXPECT_EQ(s.trajectory[static_cast<std::size_t>(i)], 0.0);
  EXPECT_EQ(s.buffer, 0.5);
  EXPECT_EQ(s.content[1], 1.0);
  EXPECT_EQ(s.saliency, (std::vector<double>{0.3, 1.0}));
  for (double v : s.global_features()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(BuildState, ReplayIsIdentical) {
  SessionHistory h;
  h.poses.resize(7);
  for (int i = 0; i < 7; ++i) h.poses[static_cast<std::size_t>(i)].position = {0.1 * i, 0.2, -0.3 * i};
  h.bandwidth_mbps = {50, 70, 65};
  h.decode_primitives = 4e4;
  const auto a = build_state(h, std::vector<double>{0.1}, 3.0);
  const auto b = build_state(h, std::vector<double>{0.1}, 3.0);
  EXPECT_EQ(a.global_features(), b.global_features());
  EXPECT_EQ(a.task_features(), b.task_features());
}
