#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsstream/autodiff.hpp"
#include "gsstream/errors.hpp"
#include "gsstream/ladder.hpp"
#include "gsstream/nn.hpp"
#include "gsstream/primitive.hpp"
#include "gsstream/rng.hpp"

namespace gsstream {

/// Per-primitive inputs of the saliency networks.
struct PrimitiveFeature {
  Vec3 position;  // normalized into the GoF frame
  Vec3 color;     // order-0 SH triple
  double gray = 0.0;
};

/// Positions are centered on `frame` and scaled by its largest half extent.
inline PrimitiveFeature primitive_feature(const GaussianPrimitive& g, const Box& frame) {
  PrimitiveFeature f;
  const double half = 0.5 * frame.extent().maxCoeff();
  f.position = half > 0.0 ? Vec3((g.position - frame.center()) / half) : Vec3::Zero();
  f.color = g.sh0;
  f.gray = grayscale(g);
  return f;
}

inline constexpr int kDiscrepancyWidth = 14;

/// [p_i, p_k, p_i - p_k, |p_i - p_k|, d_i, d_k, d_i - d_k, |d_i - d_k|].
inline std::array<double, kDiscrepancyWidth> discrepancy_input(const PrimitiveFeature& i, const PrimitiveFeature& k) {
  const Vec3 dp = i.position - k.position;
  return {i.position.x(), i.position.y(), i.position.z(), k.position.x(), k.position.y(), k.position.z(),
          dp.x(),         dp.y(),         dp.z(),         dp.norm(),      i.gray,         k.gray,
          i.gray - k.gray, std::abs(i.gray - k.gray)};
}

/// Indices of the k nearest points to points[i] (self included, ties by index);
/// short sets are padded with i.
inline std::vector<int> nearest_neighbors(std::span<const Vec3> points, int i, int k) {
  std::vector<int> order(points.size());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
  const Vec3 c = points[static_cast<std::size_t>(i)];
  auto dist = [&](int j) { return (points[static_cast<std::size_t>(j)] - c).squaredNorm(); };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double da = dist(a), db = dist(b);
    return da != db ? da < db : a < b;
  });
  order.resize(std::min(order.size(), static_cast<std::size_t>(k)));
  while (order.size() < static_cast<std::size_t>(k)) order.push_back(i);
  return order;
}

/// Farthest-point subset of `count` indices, seeded at index 0, returned ascending.
inline std::vector<int> farthest_point_keep(std::span<const Vec3> points, std::size_t count) {
  require(!points.empty(), "farthest_point_keep: empty point set");
  count = std::clamp<std::size_t>(count, 1, points.size());
  std::vector<double> best(points.size(), std::numeric_limits<double>::infinity());
  std::vector<int> keep{0};
  while (keep.size() < count) {
    const Vec3 last = points[static_cast<std::size_t>(keep.back())];
    int arg = -1;
    for (std::size_t j = 0; j < points.size(); ++j) {
      best[j] = std::min(best[j], (points[j] - last).squaredNorm());
      if (arg < 0 || best[j] > best[static_cast<std::size_t>(arg)]) arg = static_cast<int>(j);
    }
    keep.push_back(arg);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

/// Temporal gate: 1 / (1 + exp(s)) + 1, inside (1, 2).
inline double temporal_gate(double s_sim) { return nn::sigmoid(-s_sim) + 1.0; }

struct SaliencyNetConfig {
  int neighbors = 8;        // K
  int blocks = 2;           // LDC blocks
  int width = 16;           // feature width W
  int encoding = 8;         // discrepancy code width D
  int hidden = 16;          // hidden width of scalar heads
  double keep_ratio = 0.5;  // farthest-point keep per block
  int samples_per_tile = 64;
  std::uint64_t seed = 0;

  void validate() const {
    require(neighbors >= 1, "saliency: K must be >= 1");
    require(blocks == 2, "saliency: the encoder has exactly two LDC blocks");
    require(width >= 1 && encoding >= 1 && hidden >= 1, "saliency: widths must be positive");
    require(keep_ratio > 0.0 && keep_ratio <= 1.0, "saliency: keep ratio must lie in (0, 1]");
    require(samples_per_tile >= 1, "saliency: samples per tile must be >= 1");
  }
};

enum SaliencyPart : std::size_t {
  kEmbed,
  kEncode0,
  kEncode1,
  kAttend0,
  kAttend1,
  kBlock0,
  kBlock1,
  kMiddle,
  kDecode,
  kSimilarity0,
  kSimilarity1,
  kTemporal0,
  kTemporal1,
  kTemporalDecode,
  kFuseSpatial,
  kFuseTemporal,
  kScoreHead,
  kSaliencyPartCount
};

inline const char* part_name(SaliencyPart p) {
  static constexpr std::array<const char*, kSaliencyPartCount> names{
      "embed",       "encode0",     "encode1",   "attend0",   "attend1",         "block0",
      "block1",      "middle",      "decode",    "similarity0", "similarity1",   "temporal0",
      "temporal1",   "temporal_decode", "fuse_spatial", "fuse_temporal", "score_head"};
  return names.at(p);
}

struct SaliencyNet {
  SaliencyNetConfig cfg;
  std::vector<nn::NamedMlp> parts;

  static SaliencyNet make(const SaliencyNetConfig& cfg) {
    cfg.validate();
    const int w = cfg.width, d = cfg.encoding, h = cfg.hidden;
    using nn::Activation;
    auto spec = [&](std::size_t p, std::vector<int> widths, Activation out) {
      return nn::MlpSpec::make(std::move(widths), Activation::ReLU, out, derive_seed(cfg.seed, p));
    };
    std::array<nn::MlpSpec, kSaliencyPartCount> specs{
        spec(kEmbed, {6, w}, Activation::None),
        spec(kEncode0, {kDiscrepancyWidth, d, d}, Activation::ReLU),
        spec(kEncode1, {kDiscrepancyWidth, d, d}, Activation::ReLU),
        spec(kAttend0, {d + w, h, 1}, Activation::None),
        spec(kAttend1, {d + w, h, 1}, Activation::None),
        spec(kBlock0, {d + w, w}, Activation::ReLU),
        spec(kBlock1, {d + w, w}, Activation::ReLU),
        spec(kMiddle, {w, w}, Activation::ReLU),
        spec(kDecode, {2 * w, w}, Activation::None),
        spec(kSimilarity0, {2 * w, h, 1}, Activation::None),
        spec(kSimilarity1, {2 * w, h, 1}, Activation::None),
        spec(kTemporal0, {w, w}, Activation::ReLU),
        spec(kTemporal1, {w, w}, Activation::ReLU),
        spec(kTemporalDecode, {w, w}, Activation::None),
        spec(kFuseSpatial, {w, h, 1}, Activation::None),
        spec(kFuseTemporal, {w, h, 1}, Activation::None),
        spec(kScoreHead, {w, h, 1}, Activation::None),
    };
    SaliencyNet net;
    net.cfg = cfg;
    for (std::size_t p = 0; p < kSaliencyPartCount; ++p)
      net.parts.push_back({part_name(static_cast<SaliencyPart>(p)), specs[p], nn::init_params(specs[p])});
    return net;
  }

  const nn::NamedMlp& part(SaliencyPart p) const { return parts.at(p); }
  nn::NamedMlp& part(SaliencyPart p) { return parts.at(p); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parts) n += p.params.size();
    return n;
  }

  std::vector<nn::ParamVector> zero_gradients() const {
    std::vector<nn::ParamVector> g;
    for (const auto& p : parts) g.push_back(nn::ParamVector::zeros_like(p.params));
    return g;
  }
};

/// f_i = FC(p_i, a_i) for each listed primitive.
inline nn::Matrix initial_features(const SaliencyNet& net, const Scene& scene, std::span<const std::size_t> ids,
                                   const Box& frame) {
  const auto& e = net.part(kEmbed);
  nn::Matrix out(static_cast<Eigen::Index>(ids.size()), e.spec.output_width());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto f = primitive_feature(scene.at(ids[r]), frame);
    const std::array<double, 6> x{f.position.x(), f.position.y(), f.position.z(), f.color.x(), f.color.y(), f.color.z()};
    const auto y = nn::mlp_forward(e.spec, e.params, x);
    for (std::size_t c = 0; c < y.size(); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = y[c];
  }
  return out;
}

/// Reference attention pooling over one neighbor set (rows = enhanced features).
inline nn::Vector attention_pool(const nn::Matrix& enhanced, const nn::MlpSpec& spec, const nn::ParamVector& params) {
  require(enhanced.rows() >= 1, "attention_pool: empty neighbor set");
  nn::Vector scores;
  for (Eigen::Index k = 0; k < enhanced.rows(); ++k) {
    nn::Vector row(static_cast<std::size_t>(enhanced.cols()));
    for (Eigen::Index c = 0; c < enhanced.cols(); ++c) row[static_cast<std::size_t>(c)] = enhanced(k, c);
    scores.push_back(nn::mlp_forward(spec, params, row)[0]);
  }
  const auto w = nn::softmax(scores);
  nn::Vector out(static_cast<std::size_t>(enhanced.cols()), 0.0);
  for (Eigen::Index k = 0; k < enhanced.rows(); ++k)
    for (Eigen::Index c = 0; c < enhanced.cols(); ++c) out[static_cast<std::size_t>(c)] += w[static_cast<std::size_t>(k)] * enhanced(k, c);
  return out;
}

/// F_C = A_S * F_S + (1 - A_S) * F_T with A_S = softmax(a_s, a_t)[0].
inline nn::Vector fuse_features(std::span<const double> fs, std::span<const double> ft, double a_s, double a_t) {
  require(fs.size() == ft.size(), "fuse: branch widths differ");
  const auto w = nn::softmax(std::array<double, 2>{a_s, a_t});
  nn::Vector out(fs.size());
  for (std::size_t c = 0; c < fs.size(); ++c) out[c] = w[0] * fs[c] + w[1] * ft[c];
  return out;
}

/// Mean member feature followed by the two-layer score head.
inline double tile_score(const nn::Matrix& members, const nn::MlpSpec& head, const nn::ParamVector& params) {
  require(members.rows() >= 1, "tile_score: empty tile");
  nn::Vector mean(static_cast<std::size_t>(members.cols()), 0.0);
  for (Eigen::Index c = 0; c < members.cols(); ++c) mean[static_cast<std::size_t>(c)] = members.col(c).mean();
  return nn::mlp_forward(head, params, mean)[0];
}

/// Sampled members of one tile.
struct SampledTile {
  int tile_id = -1;
  std::vector<std::size_t> ids;
};

/// One GoF of saliency input. `prev` (optional) is the previous GoF's scene
/// with the same primitive indexing; co-located tiles share member ids.
struct SaliencyInput {
  const Scene* cur = nullptr;
  const Scene* prev = nullptr;
  std::vector<SampledTile> tiles;
  Box frame;
};

inline SaliencyInput make_saliency_input(const Scene& cur, const Scene* prev, std::span<const Tile> tiles,
                                         int samples_per_tile, std::uint64_t seed) {
  require(!prev || prev->size() == cur.size(), "saliency: previous GoF must share primitive indexing");
  SaliencyInput in;
  in.cur = &cur;
  in.prev = prev;
  in.frame = bounding_box(cur);
  for (const auto& t : tiles) {
    require(!t.primitive_ids.empty(), "saliency: empty tile " + std::to_string(t.id));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t.id)));
    in.tiles.push_back({t.id, sample_primitives(t, cur, static_cast<std::size_t>(samples_per_tile), rng)});
  }
  return in;
}

namespace detail {

struct SaliencyStage {
  std::vector<Vec3> position;
  std::vector<int> tile;       // tile slot of each row
  std::vector<int> neighbors;  // K rows per point
  nn::Matrix discrepancy;      // (n K) x 14
  std::vector<int> keep;       // rows that survive into the next stage
};

/// Parameter-independent geometry of one GoF version.
struct SaliencyGeometry {
  nn::Matrix input;  // n x 6
  std::array<SaliencyStage, 2> stages;
  std::vector<int> upsample;  // stage-0 row -> row of the final downsampled set
  int tiles = 0;
};

inline SaliencyGeometry saliency_geometry(const Scene& scene, const SaliencyInput& in, int k, double keep_ratio) {
  SaliencyGeometry g;
  g.tiles = static_cast<int>(in.tiles.size());
  std::vector<PrimitiveFeature> feats;
  std::vector<int> tile_of;
  for (std::size_t t = 0; t < in.tiles.size(); ++t)
    for (auto id : in.tiles[t].ids) {
      feats.push_back(primitive_feature(scene.at(id), in.frame));
      tile_of.push_back(static_cast<int>(t));
    }
  const auto n = static_cast<Eigen::Index>(feats.size());
  g.input.resize(n, 6);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& f = feats[static_cast<std::size_t>(r)];
    g.input.row(r) << f.position.x(), f.position.y(), f.position.z(), f.color.x(), f.color.y(), f.color.z();
  }

  std::vector<int> rows(feats.size());  // stage row -> stage-0 row
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = static_cast<int>(r);
  for (auto& st : g.stages) {
    st.tile.clear();
    for (int r : rows) {
      st.position.push_back(feats[static_cast<std::size_t>(r)].position);
      st.tile.push_back(tile_of[static_cast<std::size_t>(r)]);
    }
    st.discrepancy.resize(static_cast<Eigen::Index>(rows.size()) * k, kDiscrepancyWidth);
    st.neighbors.assign(rows.size() * static_cast<std::size_t>(k), 0);
    std::vector<int> next;
    for (int t = 0; t < g.tiles; ++t) {
      std::vector<int> local;
      std::vector<Vec3> pts;
      for (std::size_t r = 0; r < rows.size(); ++r)
        if (st.tile[r] == t) {
          local.push_back(static_cast<int>(r));
          pts.push_back(st.position[r]);
        }
      for (std::size_t a = 0; a < local.size(); ++a) {
        const auto nb = nearest_neighbors(pts, static_cast<int>(a), k);
        const auto row = static_cast<std::size_t>(local[a]);
        for (int j = 0; j < k; ++j) {
          const int other = local[static_cast<std::size_t>(nb[static_cast<std::size_t>(j)])];
          st.neighbors[row * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] = other;
          const auto x = discrepancy_input(feats[static_cast<std::size_t>(rows[row])],
                                           feats[static_cast<std::size_t>(rows[static_cast<std::size_t>(other)])]);
          for (int c = 0; c < kDiscrepancyWidth; ++c)
            st.discrepancy(static_cast<Eigen::Index>(row) * k + j, c) = x[static_cast<std::size_t>(c)];
        }
      }
      const auto count = static_cast<std::size_t>(std::ceil(keep_ratio * static_cast<double>(pts.size())));
      for (int a : farthest_point_keep(pts, count)) next.push_back(local[static_cast<std::size_t>(a)]);
    }
    std::sort(next.begin(), next.end());
    st.keep = next;
    std::vector<int> mapped;
    for (int r : next) mapped.push_back(rows[static_cast<std::size_t>(r)]);
    rows = std::move(mapped);
  }

  // nearest surviving point of the same tile
  for (std::size_t r = 0; r < feats.size(); ++r) {
    int best = -1;
    double best_d = 0.0;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (tile_of[static_cast<std::size_t>(rows[j])] != tile_of[r]) continue;
      const double d = (feats[static_cast<std::size_t>(rows[j])].position - feats[r].position).squaredNorm();
      if (best < 0 || d < best_d) best = static_cast<int>(j), best_d = d;
    }
    g.upsample.push_back(best);
  }
  return g;
}

inline std::vector<int> row_tiles(const SaliencyGeometry& g) { return g.stages[0].tile; }

}  // namespace detail

/// Graph handles of one forward pass.
struct SaliencyTape {
  nn::Var spatial, temporal, fused, scores;
  std::array<nn::Var, 2> gates{};  // per-tile O_s of each TC layer
};

/// Records the full saliency forward pass on `g`. When `grads` is given,
/// parameter gradients of each part accumulate into it on backward().
inline SaliencyTape saliency_forward(nn::Graph& g, const SaliencyNet& net, std::vector<nn::ParamVector>* grads,
                                     const detail::SaliencyGeometry& cur, const detail::SaliencyGeometry* prev) {
  const int k = net.cfg.neighbors;
  auto run = [&](SaliencyPart p, nn::Var x) {
    const auto& m = net.part(p);
    return g.mlp(m.spec, m.params, grads ? &(*grads)[p] : nullptr, x);
  };
  auto ldc = [&](int b, nn::Var f, const detail::SaliencyStage& st) {
    const nn::Var nb = g.gather_rows(f, st.neighbors);
    const nn::Var dp = run(b == 0 ? kEncode0 : kEncode1, g.constant(st.discrepancy));
    const nn::Var enhanced = g.concat_cols({dp, nb});
    const nn::Var weights = g.group_softmax(run(b == 0 ? kAttend0 : kAttend1, enhanced), k);
    const nn::Var pooled = g.group_weighted_sum(enhanced, weights, k);
    return g.add(run(b == 0 ? kBlock0 : kBlock1, pooled), f);
  };

  SaliencyTape tape;
  const nn::Var f0 = run(kEmbed, g.constant(cur.input));
  const nn::Var out0 = ldc(0, f0, cur.stages[0]);
  const nn::Var out1 = ldc(1, g.gather_rows(out0, cur.stages[0].keep), cur.stages[1]);
  const nn::Var mid = run(kMiddle, g.gather_rows(out1, cur.stages[1].keep));
  tape.spatial = run(kDecode, g.concat_cols({g.gather_rows(mid, cur.upsample), f0}));

  const auto seg = detail::row_tiles(cur);
  nn::Var t = out0;
  std::optional<nn::Var> tp;
  if (prev) tp = ldc(0, run(kEmbed, g.constant(prev->input)), prev->stages[0]);
  for (int l = 0; l < 2; ++l) {
    nn::Var gate;
    if (tp) {
      const nn::Var q = g.segment_max(t, seg, cur.tiles);
      const nn::Var qp = g.segment_max(*tp, seg, cur.tiles);
      const nn::Var s = run(l == 0 ? kSimilarity0 : kSimilarity1, g.concat_cols({q, qp}));
      gate = g.affine(g.sigmoid(g.affine(s, -1.0, 0.0)), 1.0, 1.0);
    } else {
      gate = g.constant(nn::Matrix::Constant(cur.tiles, 1, 1.5));
    }
    tape.gates[static_cast<std::size_t>(l)] = gate;
    const SaliencyPart fc = l == 0 ? kTemporal0 : kTemporal1;
    t = run(fc, g.scale_rows(t, g.gather_rows(gate, seg)));
    if (tp) tp = run(fc, *tp);
  }
  tape.temporal = run(kTemporalDecode, t);

  const nn::Var branch = g.row_softmax(g.concat_cols({run(kFuseSpatial, tape.spatial), run(kFuseTemporal, tape.temporal)}));
  tape.fused = g.add(g.scale_rows(tape.spatial, g.cols(branch, 0, 1)), g.scale_rows(tape.temporal, g.cols(branch, 1, 1)));
  tape.scores = run(kScoreHead, g.segment_mean(tape.fused, seg, cur.tiles));
  return tape;
}

struct GofSaliency {
  nn::Matrix spatial, temporal, fused;  // one row per sampled primitive, tile-major
  std::vector<double> scores;           // per tile, in input order
  std::vector<std::array<double, 2>> gates;
};

inline GofSaliency evaluate_saliency(const SaliencyNet& net, const SaliencyInput& in) {
  require(in.cur != nullptr, "saliency: missing current GoF");
  require(!in.tiles.empty(), "saliency: no tiles");
  for (const auto& t : in.tiles) require(!t.ids.empty(), "saliency: empty tile " + std::to_string(t.tile_id));
  const auto cur = detail::saliency_geometry(*in.cur, in, net.cfg.neighbors, net.cfg.keep_ratio);
  std::optional<detail::SaliencyGeometry> prev;
  if (in.prev) prev = detail::saliency_geometry(*in.prev, in, net.cfg.neighbors, net.cfg.keep_ratio);
  nn::Graph g;
  const auto tape = saliency_forward(g, net, nullptr, cur, prev ? &*prev : nullptr);
  GofSaliency out;
  out.spatial = g.value(tape.spatial);
  out.temporal = g.value(tape.temporal);
  out.fused = g.value(tape.fused);
  for (Eigen::Index t = 0; t < g.value(tape.scores).rows(); ++t) {
    out.scores.push_back(g.value(tape.scores)(t, 0));
    out.gates.push_back({g.value(tape.gates[0])(t, 0), g.value(tape.gates[1])(t, 0)});
  }
  for (double s : out.scores) require(std::isfinite(s), "saliency: non-finite tile score");
  return out;
}

/// Ground-truth stand-in: 0.5 * member grayscale contrast against the scene
/// mean plus 0.5 * tile centroid shift since `prev`, min-max normalized.
inline std::vector<double> oracle_scores(const Scene& cur, const Scene* prev, std::span<const Tile> tiles) {
  require(!cur.empty(), "oracle: empty scene");
  require(!prev || prev->size() == cur.size(), "oracle: previous GoF must share primitive indexing");
  double mean_gray = 0.0;
  for (const auto& g : cur) mean_gray += grayscale(g);
  mean_gray /= static_cast<double>(cur.size());
  std::vector<double> raw;
  for (const auto& t : tiles) {
    require(!t.primitive_ids.empty(), "oracle: empty tile");
    double contrast = 0.0;
    for (auto id : t.primitive_ids) contrast += std::abs(grayscale(cur.at(id)) - mean_gray);
    contrast /= static_cast<double>(t.primitive_ids.size());
    double shift = 0.0;
    if (prev) shift = (centroid(t, cur) - centroid(t, *prev)).norm();
    raw.push_back(0.5 * contrast + 0.5 * shift);
  }
  return normalize_saliency(raw);
}

/// Kendall rank correlation (tau-b); 0 when either side is constant.
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "kendall_tau: size mismatch");
  double concordant = 0.0, discordant = 0.0, ties_a = 0.0, ties_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) {
        ties_a += 1.0;
      } else if (db == 0.0) {
        ties_b += 1.0;
      } else if ((da > 0.0) == (db > 0.0)) {
        concordant += 1.0;
      } else {
        discordant += 1.0;
      }
    }
  const double denom = std::sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b));
  return denom > 0.0 ? (concordant - discordant) / denom : 0.0;
}

/// One training GoF with its target tile scores.
struct SaliencySample {
  SaliencyInput input;
  std::vector<double> target;
};

struct SaliencyTrainConfig {
  int epochs = 200;
  double learning_rate = 0.02;
  double momentum = 0.5;
  double divergence_factor = 10.0;
};

struct SaliencyTrainReport {
  std::vector<double> loss_curve;  // full-batch loss before each update
  double final_loss = 0.0;
};

namespace detail {

struct PreparedSaliencySample {
  SaliencyGeometry cur;
  std::optional<SaliencyGeometry> prev;
  nn::Matrix target;
};

inline std::vector<PreparedSaliencySample> prepare_samples(const SaliencyNet& net,
                                                           std::span<const SaliencySample> samples) {
  std::vector<PreparedSaliencySample> out;
  for (const auto& s : samples) {
    require(s.input.cur != nullptr, "saliency: sample without a current GoF");
    require(s.target.size() == s.input.tiles.size(), "saliency: one target per tile required");
    PreparedSaliencySample p;
    p.cur = saliency_geometry(*s.input.cur, s.input, net.cfg.neighbors, net.cfg.keep_ratio);
    if (s.input.prev) p.prev = saliency_geometry(*s.input.prev, s.input, net.cfg.neighbors, net.cfg.keep_ratio);
    p.target = Eigen::Map<const nn::Matrix>(s.target.data(), static_cast<Eigen::Index>(s.target.size()), 1);
    out.push_back(std::move(p));
  }
  return out;
}

inline double saliency_batch_loss(const SaliencyNet& net, std::span<const PreparedSaliencySample> batch,
                                  std::vector<nn::ParamVector>* grads) {
  double total = 0.0;
  const double n = static_cast<double>(batch.size());
  for (const auto& s : batch) {
    nn::Graph g;
    const auto tape = saliency_forward(g, net, grads, s.cur, s.prev ? &*s.prev : nullptr);
    const nn::Var loss = g.affine(g.smooth_l1_mean(tape.scores, s.target), 1.0 / n, 0.0);
    if (grads) g.backward(loss);
    total += g.scalar(loss);
  }
  return total;
}

}  // namespace detail

/// Mean Smooth-L1 between predicted and target tile scores over the samples;
/// fills `grads` (one per part) when given.
inline double saliency_loss(const SaliencyNet& net, std::span<const SaliencySample> samples,
                            std::vector<nn::ParamVector>* grads = nullptr) {
  const auto batch = detail::prepare_samples(net, samples);
  if (grads) *grads = net.zero_gradients();
  return detail::saliency_batch_loss(net, batch, grads);
}

/// Full-batch momentum descent on every part; throws DivergenceError when the
/// loss exceeds divergence_factor times its initial value.
inline SaliencyTrainReport train_saliency(SaliencyNet& net, std::span<const SaliencySample> samples,
                                          const SaliencyTrainConfig& cfg) {
  require(!samples.empty(), "saliency: empty training set");
  require(cfg.epochs >= 1 && cfg.learning_rate > 0.0, "saliency: bad training configuration");
  const auto batch = detail::prepare_samples(net, samples);
  std::vector<nn::MomentumSgd> opt(kSaliencyPartCount, nn::MomentumSgd(cfg.learning_rate, cfg.momentum));
  SaliencyTrainReport rep;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto grads = net.zero_gradients();
    const double loss = detail::saliency_batch_loss(net, batch, &grads);
    if (!std::isfinite(loss) || (!rep.loss_curve.empty() && loss > cfg.divergence_factor * rep.loss_curve.front()))
      throw DivergenceError("saliency training diverged at epoch " + std::to_string(e) + ": loss " +
                            std::to_string(loss) + ", initial " +
                            std::to_string(rep.loss_curve.empty() ? loss : rep.loss_curve.front()));
    rep.loss_curve.push_back(loss);
    for (std::size_t p = 0; p < kSaliencyPartCount; ++p) opt[p].step(net.parts[p].params.values, grads[p].values);
  }
  rep.final_loss = detail::saliency_batch_loss(net, batch, nullptr);
  return rep;
}

inline nn::Checkpoint saliency_checkpoint(const SaliencyNet& net) {
  nn::Checkpoint ck;
  ck.mlps = net.parts;
  const auto& c = net.cfg;
  ck.arrays.push_back({"config",
                       {double(c.neighbors), double(c.blocks), double(c.width), double(c.encoding), double(c.hidden),
                        c.keep_ratio, double(c.samples_per_tile), std::bit_cast<double>(c.seed)}});
  return ck;
}

inline SaliencyNet saliency_from_checkpoint(const nn::Checkpoint& ck) {
  const auto& a = ck.array("config");
  require(a.size() == 8, "saliency checkpoint: bad config record");
  SaliencyNetConfig c;
  c.neighbors = static_cast<int>(a[0]);
  c.blocks = static_cast<int>(a[1]);
  c.width = static_cast<int>(a[2]);
  c.encoding = static_cast<int>(a[3]);
  c.hidden = static_cast<int>(a[4]);
  c.keep_ratio = a[5];
  c.samples_per_tile = static_cast<int>(a[6]);
  c.seed = std::bit_cast<std::uint64_t>(a[7]);
  SaliencyNet net = SaliencyNet::make(c);
  for (auto& p : net.parts) {
    const auto& m = ck.mlp(p.name);
    require(m.spec.widths == p.spec.widths, "saliency checkpoint: shape mismatch in " + p.name);
    p.params = m.params;
  }
  return net;
}

}  // namespace gsstream
