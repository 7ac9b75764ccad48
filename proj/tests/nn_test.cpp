#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gradcheck.hpp"
#include "gsstream/autodiff.hpp"
#include "gsstream/nn.hpp"

using namespace gsstream;
using namespace gsstream::nn;

TEST(MlpForward, ZeroParamsGiveZeroOutput) {
  const auto spec = MlpSpec::make({3, 4, 2});
  const auto y = mlp_forward(spec, zero_params(spec), std::vector<double>{1, -2, 3});
  for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(MlpForward, IdentityLayerPassesInputThrough) {
  const auto spec = MlpSpec::make({3, 3}, Activation::None, Activation::None);
  auto p = zero_params(spec);
  for (int i = 0; i < 3; ++i) p.weight(0, i, i) = 1.0;
  const std::vector<double> x{0.5, -1.5, 2.0};
  EXPECT_EQ(mlp_forward(spec, p, x), x);
}

TEST(MlpForward, SeededReplayIsExact) {
  const auto spec = MlpSpec::make({4, 8, 3}, Activation::ReLU, Activation::None, 1234);
  const std::vector<double> x{0.1, 0.2, -0.3, 0.4};
  const auto a = mlp_forward(spec, init_params(spec), x);
  const auto b = mlp_forward(spec, init_params(spec), x);
  EXPECT_EQ(a, b);
  // Hand replay of the affine chain.
  const auto p = init_params(spec);
  std::vector<double> h(8);
  for (int o = 0; o < 8; ++o) {
    double acc = p.bias(0, o);
    for (int i = 0; i < 4; ++i) acc += p.weight(0, o, i) * x[i];
    h[o] = std::max(0.0, acc);
  }
  for (int o = 0; o < 3; ++o) {
    double acc = p.bias(1, o);
    for (int i = 0; i < 8; ++i) acc += p.weight(1, o, i) * h[i];
    EXPECT_DOUBLE_EQ(a[o], acc);
  }
}

TEST(MlpForward, RejectsLengthMismatch) {
  const auto spec = MlpSpec::make({3, 2});
  EXPECT_THROW(mlp_forward(spec, zero_params(spec), std::vector<double>{1, 2}), ValidationError);
}

TEST(ParamLayout, SizeMatchesLayerSum) {
  const auto spec = MlpSpec::make({14, 16, 16, 1});
  EXPECT_EQ(ParamLayout::of(spec).size, 15u * 16 + 17u * 16 + 17u * 1);
}

TEST(Init, GlorotBoundsAndZeroBias) {
  const auto spec = MlpSpec::make({10, 6}, Activation::ReLU, Activation::None, 5);
  const auto p = init_params(spec);
  const double limit = std::sqrt(6.0 / 16.0);
  for (int o = 0; o < 6; ++o) {
    EXPECT_EQ(p.bias(0, o), 0.0);
    for (int i = 0; i < 10; ++i) EXPECT_LE(std::abs(p.weight(0, o, i)), limit);
  }
}

TEST(Softmax, Examples) {
  auto p = softmax(std::vector<double>{0, 0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  p = softmax(std::vector<double>{0, std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
  for (double x : {-1000.0, 0.0, 7.5, 1000.0}) {
    for (double v : softmax(std::vector<double>{x, x, x})) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
  EXPECT_THROW(softmax(std::vector<double>{}), ValidationError);
}

TEST(Softmax, PositiveAndNormalized) {
  Rng rng(2);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> s(1 + rng.index(10));
    for (double& v : s) v = rng.uniform(-30, 30);
    const auto p = softmax(s);
    double total = 0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(SmoothL1, ExamplesAndDerivative) {
  EXPECT_EQ(smooth_l1(0.0), 0.0);
  EXPECT_EQ(smooth_l1(1.0), 0.5);
  EXPECT_EQ(smooth_l1(2.0), 1.5);
  EXPECT_EQ(smooth_l1(-2.0), 1.5);
  for (double x = -3; x <= 3; x += 0.01) {
    EXPECT_LE(std::abs(smooth_l1_grad(x)), 1.0);
    const double fd = (smooth_l1(x + 1e-6) - smooth_l1(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(smooth_l1_grad(x), fd, 1e-5);
  }
}

TEST(Film, Examples) {
  const std::vector<double> h{1, 2};
  EXPECT_EQ(film(h, std::vector<double>{1, 1}, std::vector<double>{0, 0}), h);
  EXPECT_EQ(film(h, std::vector<double>{0, 0}, std::vector<double>{4, 5}), (std::vector<double>{4, 5}));
  EXPECT_EQ(film(h, std::vector<double>{2, 2}, std::vector<double>{1, 1}), (std::vector<double>{3, 5}));
  EXPECT_THROW(film(h, std::vector<double>{1}, std::vector<double>{0, 0}), ValidationError);
}

TEST(Gradients, ConstantLossGivesZero) {
  const auto spec = MlpSpec::make({3, 5, 2}, Activation::ReLU, Activation::None, 9);
  const auto g = gradients(spec, init_params(spec), std::vector<double>{1, 2, 3}, std::vector<double>{0, 0});
  for (double v : g.params.values) EXPECT_EQ(v, 0.0);
}

TEST(Gradients, LinearLayerSumLossBroadcastsInput) {
  const auto spec = MlpSpec::make({3, 2}, Activation::None, Activation::None, 4);
  const std::vector<double> x{0.5, -1.0, 2.0};
  const auto g = gradients(spec, init_params(spec), x, std::vector<double>{1, 1});
  for (int o = 0; o < 2; ++o) {
    EXPECT_EQ(g.params.bias(0, o), 1.0);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(g.params.weight(0, o, i), x[i]);
  }
}

TEST(Gradients, FiniteDifferenceAgreementOnDownstreamShapes) {
  const std::vector<std::vector<int>> shapes{{14, 16, 16}, {16, 16, 1}, {32, 16, 1}, {16, 32, 7}, {40, 64, 64},
                                             {5, 16, 8},   {8, 64},     {3, 7, 5, 4}};
  std::uint64_t seed = 100;
  for (const auto& w : shapes) {
    const auto spec = MlpSpec::make(w, Activation::ReLU, Activation::None, seed++);
    const auto r = check::check_mlp(spec, 100, seed++);
    EXPECT_EQ(r.failures, 0) << "worst " << r.worst_relative_error;
  }
}

TEST(GradCheck, FlagsWrongGradientAndSkipsKinks) {
  const auto spec = MlpSpec::make({4, 3});
  ParamVector p = init_params(spec);
  auto smooth = [](const ParamVector& q) {
    double s = 0.0;
    for (double v : q.values) s += (v + 1.0) * (v + 1.0);
    return s;
  };
  const auto wrong = check::check_gradient(smooth, p, ParamVector::zeros_like(p), 20, 1);
  EXPECT_EQ(wrong.failures, 20);
  EXPECT_EQ(wrong.kinks, 0);
  // |x| sampled exactly at its kink: every draw is skipped until the skip budget runs out
  std::fill(p.values.begin(), p.values.end(), 0.0);
  auto kinked = [](const ParamVector& q) {
    double s = 0.0;
    for (double v : q.values) s += std::abs(v) + (v > 2e-6 ? 1e5 * (v - 2e-6) : 0.0);
    return s;
  };
  const auto k = check::check_gradient(kinked, p, ParamVector::zeros_like(p), 5, 2);
  EXPECT_EQ(k.kinks, 5);
  EXPECT_EQ(k.probes, 5);
}

TEST(MomentumSgd, HeavyBallUpdate) {
  MomentumSgd opt(0.1, 0.9);
  std::vector<double> p{1.0};
  opt.step(p, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(p[0], 0.9);  // v = -0.1
  opt.step(p, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(p[0], 0.9 - 0.19);  // v = 0.9 * -0.1 - 0.1
}

TEST(ClipNorm, RescalesOnlyAboveThreshold) {
  std::vector<double> v{3, 4};
  EXPECT_DOUBLE_EQ(clip_norm(v, 10), 5.0);
  EXPECT_EQ(v[0], 3.0);
  clip_norm(v, 1.0);
  EXPECT_NEAR(l2_norm(v), 1.0, 1e-15);
}

TEST(Checkpoint, BitExactRoundTrip) {
  Checkpoint ck;
  const auto spec = MlpSpec::make({4, 6, 2}, Activation::ReLU, Activation::None, 77);
  auto params = init_params(spec);
  params.values[3] = std::nextafter(1.0, 2.0);
  params.values[5] = -0.0;
  ck.mlps.push_back({"head", spec, params});
  ck.arrays.push_back({"table", {1e-300, 3.141592653589793, -7.0}});
  std::stringstream buf;
  write_checkpoint(ck, buf);
  const auto back = read_checkpoint(buf);
  EXPECT_EQ(back.mlp("head").spec, spec);
  ASSERT_EQ(back.mlp("head").params.values.size(), params.values.size());
  for (std::size_t i = 0; i < params.values.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.mlp("head").params.values[i]),
              std::bit_cast<std::uint64_t>(params.values[i]));
  EXPECT_EQ(back.array("table"), ck.arrays[0].values);
  EXPECT_THROW(back.mlp("missing"), ValidationError);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream buf("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint(buf), ValidationError);
}

namespace {

// A tape exercising every op; parameters come from two MLP-shaped vectors.
struct TapeProblem {
  MlpSpec a = MlpSpec::make({4, 6, 3}, Activation::ReLU, Activation::None, 31);
  MlpSpec b = MlpSpec::make({3, 2}, Activation::None, Activation::None, 32);
  Matrix x;
  Matrix target;

  TapeProblem() {
    Rng rng(8);
    x = Matrix(6, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-1, 1);
    target = Matrix(3, 1);
    for (Eigen::Index i = 0; i < target.size(); ++i) target(i) = rng.uniform(-2, 2);
  }

  double loss(const ParamVector& pa, const ParamVector& pb, ParamVector* ga, ParamVector* gb) const {
    Graph g;
    Var in = g.constant(x);
    Var h = g.mlp(a, pa, ga, in);                          // 6 x 3
    Var s = g.sigmoid(g.cols(h, 0, 1));                    // 6 x 1
    Var att = g.group_softmax(g.affine(s, 2.0, -1.0), 2);  // 6 x 1
    Var pooled = g.group_weighted_sum(h, att, 2);          // 3 x 3
    Var scaled = g.scale_rows(pooled, g.exp(g.cols(pooled, 1, 1)));
    Var mixed = g.add(g.mul(scaled, pooled), g.sub(pooled, g.mul_const(scaled, Matrix::Constant(3, 3, 0.5))));
    Var both = g.concat_cols({mixed, g.relu(pooled)});     // 3 x 6
    Var seg_mean = g.segment_mean(g.gather_rows(both, {0, 1, 2, 2, 1}), {0, 0, 1, 1, 1}, 2);
    Var seg_max = g.segment_max(h, {0, 0, 1, 1, 2, 2}, 3);  // 3 x 3
    Var out = g.mlp(b, pb, gb, seg_max);                    // 3 x 2
    Var probs = g.row_softmax(out);
    Var logp = g.row_log_softmax(out);
    Var picked = g.pick(logp, {{0, 0}, {1, 1}, {2, 0}});
    Var l1 = g.smooth_l1_mean(g.cols(probs, 0, 1), target);
    Var total = g.add(g.add(g.mean(seg_mean), g.sum(picked)), l1);
    if (ga || gb) g.backward(total);
    return g.scalar(total);
  }
};

}  // namespace

TEST(Graph, EveryOpMatchesFiniteDifferences) {
  TapeProblem t;
  const auto pa = init_params(t.a);
  auto pb = init_params(t.b);
  for (double& v : pb.values) v += 0.1;
  auto ga = ParamVector::zeros_like(pa);
  auto gb = ParamVector::zeros_like(pb);
  t.loss(pa, pb, &ga, &gb);
  const auto ra =
      check::check_gradient([&](const ParamVector& p) { return t.loss(p, pb, nullptr, nullptr); }, pa, ga, 60, 1);
  const auto rb =
      check::check_gradient([&](const ParamVector& p) { return t.loss(pa, p, nullptr, nullptr); }, pb, gb, 8, 2);
  EXPECT_EQ(ra.failures, 0) << ra.worst_relative_error;
  EXPECT_EQ(rb.failures, 0) << rb.worst_relative_error;
}

TEST(Graph, MlpMatchesVectorForward) {
  const auto spec = MlpSpec::make({5, 7, 3}, Activation::ReLU, Activation::None, 3);
  const auto p = init_params(spec);
  Matrix x(2, 5);
  x << 1, 2, 3, 4, 5, -1, 0.5, 0, 2, -3;
  Graph g;
  Var y = g.mlp(spec, p, nullptr, g.constant(x));
  for (int r = 0; r < 2; ++r) {
    std::vector<double> row(5);
    for (int c = 0; c < 5; ++c) row[c] = x(r, c);
    const auto ref = mlp_forward(spec, p, row);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(g.value(y)(r, c), ref[c], 1e-12);
  }
}
