#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gradcheck.hpp"
#include "gsstream/saliency.hpp"
#include "gsstream/synth.hpp"
#include "gsstream/tiling.hpp"

using namespace gsstream;

namespace {

struct Toy {
  std::vector<Scene> frames;
  std::vector<Tile> tiles;
  std::vector<double> oracle;
};

Toy toy(std::uint64_t seed = 1) {
  Toy t;
  t.frames = synth_scene(saliency_toy_spec(), seed);
  t.tiles = uniform_partition(t.frames[1], GridSpec{2, 2, 2}, 1, Box{Vec3::Constant(-1.2), Vec3::Constant(1.2)});
  t.oracle = oracle_scores(t.frames[1], &t.frames[0], t.tiles);
  return t;
}

GaussianPrimitive colored(Vec3 p, Vec3 sh0) {
  GaussianPrimitive g;
  g.position = p;
  g.sh0 = sh0;
  return g;
}

std::vector<double> row(const nn::Matrix& m, Eigen::Index r) {
  std::vector<double> v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
  return v;
}

}  // namespace

TEST(PrimitiveFeature, GrayscaleOfOrderZeroTriple) {
  const auto g = colored({1, 2, 3}, {0.2, -0.4, 1.1});
  const auto f = primitive_feature(g, Box{{0, 0, 0}, {2, 4, 6}});
  EXPECT_EQ(f.gray, 0.299 * 0.2 + 0.587 * -0.4 + 0.114 * 1.1);
  EXPECT_TRUE(f.position.isApprox(Vec3(0, 0, 0), 1e-15));
  EXPECT_EQ(f.color, g.sh0);
}

TEST(InitialFeatures, ZeroWeightsShapeAndReplay) {
  SaliencyNetConfig cfg;
  cfg.seed = 5;
  auto net = SaliencyNet::make(cfg);
  const Scene s{colored({0.1, 0.2, 0.3}, {1, 0, 0})};
  const std::vector<std::size_t> ids{0};
  const Box frame{Vec3::Constant(-1), Vec3::Constant(1)};
  const auto a = initial_features(net, s, ids, frame);
  EXPECT_EQ(a.rows(), 1);
  EXPECT_EQ(a.cols(), cfg.width);
  EXPECT_EQ(a, initial_features(SaliencyNet::make(cfg), s, ids, frame));
  std::fill(net.part(kEmbed).params.values.begin(), net.part(kEmbed).params.values.end(), 0.0);
  EXPECT_TRUE(initial_features(net, s, ids, frame).isZero(0.0));
}

TEST(DiscrepancyInput, SelfNeighborHasZeroDifferences) {
  const PrimitiveFeature f{{0.3, -0.2, 0.9}, {0.1, 0.2, 0.3}, 0.7};
  const auto x = discrepancy_input(f, f);
  for (int slot : {6, 7, 8, 9, 12, 13}) EXPECT_EQ(x[static_cast<std::size_t>(slot)], 0.0);
  EXPECT_EQ(x[10], 0.7);
}

TEST(DiscrepancyInput, CoLocatedDifferentColor) {
  const PrimitiveFeature a{{0.3, -0.2, 0.9}, {}, 0.7}, b{{0.3, -0.2, 0.9}, {}, 0.2};
  const auto x = discrepancy_input(a, b);
  for (int slot : {6, 7, 8, 9}) EXPECT_EQ(x[static_cast<std::size_t>(slot)], 0.0);
  EXPECT_NEAR(x[12], 0.5, 1e-15);
  EXPECT_NEAR(x[13], 0.5, 1e-15);
}

TEST(DiscrepancyInput, MatchesIndependentAssembly) {
  Rng rng(2);
  for (int n = 0; n < 50; ++n) {
    PrimitiveFeature a, b;
    a.position = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    b.position = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    a.gray = rng.uniform(-1, 1);
    b.gray = rng.uniform(-1, 1);
    std::vector<double> oracle;
    for (int c = 0; c < 3; ++c) oracle.push_back(a.position[c]);
    for (int c = 0; c < 3; ++c) oracle.push_back(b.position[c]);
    for (int c = 0; c < 3; ++c) oracle.push_back(a.position[c] - b.position[c]);
    oracle.push_back(std::sqrt(std::pow(a.position[0] - b.position[0], 2) + std::pow(a.position[1] - b.position[1], 2) +
                               std::pow(a.position[2] - b.position[2], 2)));
    oracle.insert(oracle.end(), {a.gray, b.gray, a.gray - b.gray, std::fabs(a.gray - b.gray)});
    const auto x = discrepancy_input(a, b);
    for (std::size_t c = 0; c < oracle.size(); ++c) EXPECT_NEAR(x[c], oracle[c], 1e-15);
  }
}

TEST(NearestNeighbors, SelfFirstAndPadded) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0.2, 0, 0}};
  EXPECT_EQ(nearest_neighbors(pts, 0, 2), (std::vector<int>{0, 2}));
  EXPECT_EQ(nearest_neighbors(pts, 1, 5), (std::vector<int>{1, 2, 0, 1, 1}));
}

TEST(FarthestPointKeep, PicksSpreadPoints) {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.1, 0, 0}, {5, 0, 0}, {2.4, 0, 0}};
  EXPECT_EQ(farthest_point_keep(pts, 2), (std::vector<int>{0, 2}));
  EXPECT_EQ(farthest_point_keep(pts, 3), (std::vector<int>{0, 2, 3}));
  EXPECT_EQ(farthest_point_keep(pts, 0), (std::vector<int>{0}));
}

TEST(AttentionPool, SingletonAndIdenticalNeighbors) {
  const auto spec = nn::MlpSpec::make({3, 4, 1}, nn::Activation::ReLU, nn::Activation::None, 7);
  const auto params = nn::init_params(spec);
  nn::Matrix one(1, 3);
  one << 0.4, -1.0, 2.5;
  EXPECT_EQ(attention_pool(one, spec, params), row(one, 0));
  nn::Matrix same(4, 3);
  for (int k = 0; k < 4; ++k) same.row(k) = one.row(0);
  const auto pooled = attention_pool(same, spec, params);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(pooled[static_cast<std::size_t>(c)], one(0, c), 1e-15);
}

TEST(AttentionPool, TwoNeighborHandBlend) {
  // linear score head s = x0
  auto spec = nn::MlpSpec::make({2, 1});
  auto params = nn::zero_params(spec);
  params.weight(0, 0, 0) = 1.0;
  nn::Matrix e(2, 2);
  e << std::log(3.0), 1.0, 0.0, 5.0;  // scores ln3 and 0 -> weights 0.75 / 0.25
  const auto pooled = attention_pool(e, spec, params);
  EXPECT_NEAR(pooled[0], 0.75 * std::log(3.0), 1e-15);
  EXPECT_NEAR(pooled[1], 0.75 * 1.0 + 0.25 * 5.0, 1e-15);
}

TEST(AttentionPool, ConvexAndMatchesGraphRoute) {
  const auto spec = nn::MlpSpec::make({5, 6, 1}, nn::Activation::ReLU, nn::Activation::None, 9);
  const auto params = nn::init_params(spec);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    nn::Matrix e(8, 5);
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = rng.uniform(-2, 2);
    const auto pooled = attention_pool(e, spec, params);
    nn::Graph g;
    const nn::Var x = g.constant(e);
    const nn::Var w = g.group_softmax(g.mlp(spec, params, nullptr, x), 8);
    const nn::Matrix& y = g.value(g.group_weighted_sum(x, w, 8));
    for (int c = 0; c < 5; ++c) {
      EXPECT_NEAR(pooled[static_cast<std::size_t>(c)], y(0, c), 1e-12);
      EXPECT_GE(pooled[static_cast<std::size_t>(c)], e.col(c).minCoeff() - 1e-12);
      EXPECT_LE(pooled[static_cast<std::size_t>(c)], e.col(c).maxCoeff() + 1e-12);
    }
  }
}

TEST(TemporalGate, MidpointLimitsAndRange) {
  EXPECT_EQ(temporal_gate(0.0), 1.5);
  EXPECT_NEAR(temporal_gate(50.0), 1.0, 1e-15);
  EXPECT_NEAR(temporal_gate(-50.0), 2.0, 1e-15);
  for (double s = -30.0; s <= 30.0; s += 0.25) {
    EXPECT_GT(temporal_gate(s), 1.0);
    EXPECT_LT(temporal_gate(s), 2.0);
  }
}

TEST(TemporalGate, IdenticalGofsAndMissingPrevious) {
  const auto t = toy();
  auto net = SaliencyNet::make(SaliencyNetConfig{});
  for (auto p : {kSimilarity0, kSimilarity1}) {
    auto& m = net.part(p);
    for (std::size_t l = 0; l < m.spec.layers(); ++l)
      for (int o = 0; o < m.spec.widths[l + 1]; ++o) m.params.bias(l, o) = 0.0;
  }
  const auto same = evaluate_saliency(net, make_saliency_input(t.frames[1], &t.frames[1], t.tiles, 64, 1));
  for (const auto& g : same.gates)
    for (double v : g) {
      EXPECT_GT(v, 1.0);
      EXPECT_LT(v, 2.0);
    }
  const auto alone = evaluate_saliency(net, make_saliency_input(t.frames[1], nullptr, t.tiles, 64, 1));
  for (const auto& g : alone.gates) EXPECT_EQ(g, (std::array<double, 2>{1.5, 1.5}));
}

TEST(Fuse, ConvexCombination) {
  const std::vector<double> a{1.0, -2.0, 3.0};
  EXPECT_EQ(fuse_features(a, a, 0.3, -1.2), a);
  const std::vector<double> b{0.0, 5.0, -1.0};
  const auto only_s = fuse_features(a, b, 800.0, 0.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(only_s[c], a[c], 1e-15);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> s(4), t(4);
    for (auto& v : s) v = rng.uniform(-3, 3);
    for (auto& v : t) v = rng.uniform(-3, 3);
    const auto f = fuse_features(s, t, rng.uniform(-5, 5), rng.uniform(-5, 5));
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_GE(f[c], std::min(s[c], t[c]) - 1e-12);
      EXPECT_LE(f[c], std::max(s[c], t[c]) + 1e-12);
    }
  }
}

TEST(Fuse, NetworkOutputLiesBetweenBranches) {
  const auto t = toy();
  const auto out = evaluate_saliency(SaliencyNet::make(SaliencyNetConfig{}),
                                     make_saliency_input(t.frames[1], &t.frames[0], t.tiles, 64, 1));
  for (Eigen::Index i = 0; i < out.fused.size(); ++i) {
    EXPECT_GE(out.fused(i), std::min(out.spatial(i), out.temporal(i)) - 1e-12);
    EXPECT_LE(out.fused(i), std::max(out.spatial(i), out.temporal(i)) + 1e-12);
  }
}

TEST(TileScore, Examples) {
  auto head = nn::MlpSpec::make({2, 2, 1});
  auto p = nn::zero_params(head);
  p.bias(1, 0) = 0.25;
  nn::Matrix members(3, 2);
  members << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(tile_score(members, head, p), 0.25);
  // W_a = [[1, 0], [0, -1]], b_a = [0.5, 0], W_b = [2, 3]: mean (3, 4) -> relu(3.5, -4) -> 7.25
  p.weight(0, 0, 0) = 1.0;
  p.weight(0, 1, 1) = -1.0;
  p.bias(0, 0) = 0.5;
  p.weight(1, 0, 0) = 2.0;
  p.weight(1, 0, 1) = 3.0;
  EXPECT_DOUBLE_EQ(tile_score(members, head, p), 2.0 * 3.5 + 0.25);
  nn::Matrix same(4, 2);
  same.rowwise() = Eigen::RowVector2d(3, 4);
  EXPECT_DOUBLE_EQ(tile_score(same, head, p), tile_score(members, head, p));
  EXPECT_THROW(tile_score(nn::Matrix(0, 2), head, p), ValidationError);
}

TEST(SpatialForward, SinglePrimitiveTileAndDeterminism) {
  const Scene s{colored({0, 0, 0}, {0.5, 0.5, 0.5})};
  Tile tile;
  tile.id = 0;
  tile.primitive_ids = {0};
  const std::vector<Tile> tiles{tile};
  const auto net = SaliencyNet::make(SaliencyNetConfig{});
  const auto out = evaluate_saliency(net, make_saliency_input(s, nullptr, tiles, 64, 0));
  ASSERT_EQ(out.scores.size(), 1u);
  EXPECT_TRUE(std::isfinite(out.scores[0]));
  EXPECT_TRUE(out.spatial.allFinite());

  const auto t = toy();
  const auto in = make_saliency_input(t.frames[1], &t.frames[0], t.tiles, 64, 3);
  const auto a = evaluate_saliency(net, in), b = evaluate_saliency(SaliencyNet::make(SaliencyNetConfig{}), in);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.spatial, b.spatial);
}

TEST(SaliencyInput, RejectsEmptyTilesAndMismatchedHistory) {
  const auto t = toy();
  std::vector<Tile> tiles = t.tiles;
  tiles[0].primitive_ids.clear();
  EXPECT_THROW(make_saliency_input(t.frames[1], nullptr, tiles, 64, 0), ValidationError);
  const Scene shorter(t.frames[0].begin(), t.frames[0].end() - 1);
  EXPECT_THROW(make_saliency_input(t.frames[1], &shorter, t.tiles, 64, 0), ValidationError);
}

TEST(Oracle, UniformStaticSceneScoresEqual) {
  SceneSpec spec;
  spec.frames = 2;
  BlobSpec b;
  b.count = 80;
  b.spread = 0.5;
  b.color_jitter = 0.0;
  spec.blobs.push_back(b);
  const auto frames = synth_scene(spec, 3);
  const auto tiles = uniform_partition(frames[1], GridSpec{2, 2, 1});
  const auto s = oracle_scores(frames[1], &frames[0], tiles);
  for (double v : s) EXPECT_EQ(v, s[0]);
}

TEST(Oracle, MovingTileScoresHighest) {
  SceneSpec spec;
  spec.frames = 2;
  for (int k = 0; k < 4; ++k) {
    BlobSpec b;
    b.center = {k * 1.0, 0, 0};
    b.spread = 0.05;
    b.count = 20;
    b.color_jitter = 0.0;
    if (k == 2) {
      b.motion.kind = MotionKind::Drift;
      b.motion.velocity = {0, 0.1, 0};
    }
    spec.blobs.push_back(b);
  }
  const auto frames = synth_scene(spec, 4);
  const auto tiles = uniform_partition(frames[1], GridSpec{4, 1, 1}, 1, Box{{-0.5, -1, -1}, {3.5, 1, 1}});
  const auto s = oracle_scores(frames[1], &frames[0], tiles);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(std::max_element(s.begin(), s.end()) - s.begin(), 2);
  // single GoF input: displacement term vanishes
  EXPECT_EQ(oracle_scores(frames[1], nullptr, tiles), std::vector<double>(4, 0.0));
}

TEST(Oracle, MatchesBruteForceRecomputation) {
  const auto t = toy(6);
  const Scene& cur = t.frames[1];
  const Scene& prev = t.frames[0];
  double mean = 0.0;
  for (const auto& g : cur) mean += 0.299 * g.sh0[0] + 0.587 * g.sh0[1] + 0.114 * g.sh0[2];
  mean /= static_cast<double>(cur.size());
  std::vector<double> raw;
  for (const auto& tile : t.tiles) {
    double c = 0.0;
    Vec3 a = Vec3::Zero(), b = Vec3::Zero();
    for (auto id : tile.primitive_ids) {
      c += std::fabs(0.299 * cur[id].sh0[0] + 0.587 * cur[id].sh0[1] + 0.114 * cur[id].sh0[2] - mean);
      a += cur[id].position;
      b += prev[id].position;
    }
    const double n = static_cast<double>(tile.primitive_ids.size());
    raw.push_back(0.5 * c / n + 0.5 * ((a - b) / n).norm());
  }
  const double lo = *std::min_element(raw.begin(), raw.end()), hi = *std::max_element(raw.begin(), raw.end());
  for (std::size_t j = 0; j < raw.size(); ++j) EXPECT_NEAR(t.oracle[j], (raw[j] - lo) / (hi - lo), 1e-12);
}

TEST(KendallTau, Examples) {
  const std::vector<double> a{1, 2, 3, 4};
  EXPECT_EQ(kendall_tau(a, a), 1.0);
  EXPECT_EQ(kendall_tau(a, std::vector<double>{4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(kendall_tau(a, std::vector<double>{1, 3, 2, 4}), 4.0 / 6.0, 1e-15);
}

TEST(SaliencyLoss, PerfectAndConstantPredictors) {
  const auto t = toy();
  auto net = SaliencyNet::make(SaliencyNetConfig{});
  auto in = make_saliency_input(t.frames[1], &t.frames[0], t.tiles, 64, 1);
  const auto pred = evaluate_saliency(net, in).scores;
  EXPECT_EQ(saliency_loss(net, std::vector<SaliencySample>{{in, pred}}), 0.0);
  // zero second layer: every tile predicts b_b = 0.3
  auto& head = net.part(kScoreHead);
  std::fill(head.params.values.begin(), head.params.values.end(), 0.0);
  head.params.bias(1, 0) = 0.3;
  std::vector<double> labels(in.tiles.size());
  for (std::size_t j = 0; j < labels.size(); ++j) labels[j] = static_cast<double>(j % 2);
  // smooth_l1(0.3) = 0.045, smooth_l1(-0.7) = 0.245
  const double expected = 0.5 * 0.045 + 0.5 * 0.245;
  EXPECT_NEAR(saliency_loss(net, std::vector<SaliencySample>{{in, labels}}), expected, 1e-15);
}

TEST(SaliencyGradients, MatchFiniteDifferences) {
  const auto t = toy();
  const auto net = SaliencyNet::make(SaliencyNetConfig{});
  const std::vector<SaliencySample> data{{make_saliency_input(t.frames[1], &t.frames[0], t.tiles, 64, 1), t.oracle}};
  std::vector<nn::ParamVector> grads;
  saliency_loss(net, data, &grads);
  for (auto part : {kEmbed, kEncode0, kAttend1, kBlock0, kSimilarity0, kTemporal1, kFuseTemporal, kScoreHead}) {
    auto loss = [&](const nn::ParamVector& p) {
      auto probe = net;
      probe.part(part).params = p;
      return saliency_loss(probe, data);
    };
    const auto r = check::check_gradient(loss, net.part(part).params, grads[part], 30, part);
    EXPECT_EQ(r.failures, 0) << part_name(part) << " worst " << r.worst_relative_error;
  }
}

TEST(SaliencyTraining, ToySceneRanksTiles) {
  const auto t = toy();
  auto net = SaliencyNet::make(SaliencyNetConfig{});
  const std::vector<SaliencySample> data{{make_saliency_input(t.frames[1], &t.frames[0], t.tiles, 64, 1), t.oracle}};
  const auto rep = train_saliency(net, data, SaliencyTrainConfig{});
  EXPECT_LE(rep.final_loss, 0.5 * rep.loss_curve.front());
  double best = rep.loss_curve.front();
  for (double l : rep.loss_curve) {
    EXPECT_LE(l, 1.05 * best);
    best = std::min(best, l);
  }
  const auto scores = evaluate_saliency(net, data[0].input).scores;
  EXPECT_GE(kendall_tau(scores, t.oracle), 0.8);
}

TEST(SaliencyTraining, DivergenceAborts) {
  const auto t = toy();
  auto net = SaliencyNet::make(SaliencyNetConfig{});
  const std::vector<SaliencySample> data{{make_saliency_input(t.frames[1], &t.frames[0], t.tiles, 64, 1), t.oracle}};
  SaliencyTrainConfig cfg;
  cfg.learning_rate = 50.0;
  cfg.epochs = 50;
  EXPECT_THROW(train_saliency(net, data, cfg), DivergenceError);
}

TEST(SaliencyCheckpoint, RoundTrip) {
  SaliencyNetConfig cfg;
  cfg.seed = 77;
  cfg.neighbors = 5;
  const auto net = SaliencyNet::make(cfg);
  std::stringstream buf;
  nn::write_checkpoint(saliency_checkpoint(net), buf);
  const auto back = saliency_from_checkpoint(nn::read_checkpoint(buf));
  EXPECT_EQ(back.cfg.neighbors, 5);
  EXPECT_EQ(back.cfg.seed, 77u);
  for (std::size_t p = 0; p < kSaliencyPartCount; ++p) EXPECT_EQ(back.parts[p].params.values, net.parts[p].params.values);
}
