#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gsstream/deformation.hpp"
#include "gsstream/ladder.hpp"
#include "gsstream/primitive.hpp"
#include "gsstream/renderer.hpp"
#include "gsstream/saliency.hpp"
#include "gsstream/tiling.hpp"

namespace gsstream {

struct PipelineConfig {
  int gof_frames = 30;
  GridSpec grid;
  int target_tiles = 12;
  PruneConfig prune;
  HashGridSpec hash{4, 2, 1 << 12, 4, 32};
  int field_hidden = 16;
  FitConfig fit{150};
  int fit_stride = 5;  // target frames used for fitting, plus the last frame
  double static_fraction = 0.001;
  double high_fraction = 0.05;
  double group_tau = 0.9;
  int score_resolution = 48;
  std::uint64_t seed = 7;

  void validate() const {
    require(gof_frames >= 2, "GoF length must be >= 2 (keyframe plus at least one target frame)");
    grid.validate();
    require(target_tiles >= 1, "target tile count must be >= 1");
    prune.validate();
    hash.validate();
    require(field_hidden >= 1 && fit.epochs >= 0 && fit_stride >= 1, "bad deformation fit configuration");
    require(static_fraction >= 0.0 && high_fraction > static_fraction, "motion thresholds must satisfy 0 <= static < high");
    require(group_tau >= -1.0 && group_tau <= 1.0, "group tau must lie in [-1, 1]");
    require(score_resolution >= 16, "score resolution must be >= 16");
  }
};

struct EncodedGof {
  int index = 0;
  int first_frame = 0;
  int frames = 0;
  Scene keyframe;
  Scene probe;  // ground truth at the probe frame, used for viewport scoring
  double probe_tau = 0.0;
  std::vector<Tile> tiles;
  std::vector<double> saliency_norm;  // per tile
  std::vector<MotionRecord> motion;   // per tile
  std::vector<DeformationField> fields;
  std::vector<FitReport> fit_reports;  // per field
  int uniform_tiles = 0;
  int merges = 0;
  std::string cluster_warning;
  double mean_displacement = 0.0;
  double max_displacement = 0.0;
};

struct EncodedContent {
  PipelineConfig cfg;
  Box bounds;
  std::vector<EncodedGof> gofs;
};

/// Canonical camera that frames one box, looking from the front-upper diagonal.
inline Camera framing_camera(const Box& box, int resolution) {
  const double radius = std::max(0.5 * box.diagonal(), 0.1);
  const Vec3 dir = Vec3(0.3, 0.4, -1.0).normalized();
  return Camera::look_at(box.center() + dir * (2.5 * radius), box.center(), resolution, resolution);
}

struct TileScores {
  std::array<double, kQualityLevels> psnr{};
  std::array<double, kQualityLevels> ssim{};
};

/// Renders the tile alone at every level and compares against level 0.
inline TileScores score_tile(const Tile& tile, const Scene& scene, const Camera& cam) {
  TileScores s;
  const Image ref = render(scene, tile.ladder[0].retained, cam);
  s.psnr[0] = kPsnrCap;
  s.ssim[0] = 1.0;
  for (int r = 1; r < kQualityLevels; ++r) {
    const Image img = render(scene, tile.ladder[r].retained, cam);
    s.psnr[static_cast<std::size_t>(r)] = psnr(img, ref);
    s.ssim[static_cast<std::size_t>(r)] = ssim(img, ref);
  }
  return s;
}

/// Fills ladder PSNR/SSIM from the tile's framing camera.
inline void score_ladder(Tile& tile, const Scene& scene, int resolution) {
  const auto s = score_tile(tile, scene, framing_camera(tile.bbox, resolution));
  for (int r = 0; r < kQualityLevels; ++r) {
    tile.ladder[r].psnr_db = s.psnr[static_cast<std::size_t>(r)];
    tile.ladder[r].ssim = s.ssim[static_cast<std::size_t>(r)];
  }
}

namespace detail {

inline Box ids_box(const Scene& scene, std::span<const std::size_t> ids) {
  Box b;
  for (auto id : ids) b.extend(scene.at(id).position);
  const Vec3 pad = Vec3::Constant(1e-3);
  b.lo -= pad;
  b.hi += pad;
  return b;
}

inline Vec3 ids_centroid(const Scene& scene, std::span<const std::size_t> ids) {
  Vec3 c = Vec3::Zero();
  for (auto id : ids) c += scene.at(id).position;
  return c / static_cast<double>(ids.size());
}

}  // namespace detail

/// Encodes one GoF: uniform partition over `bounds`, tile scores (network or
/// oracle), agglomerative clustering, motion classes from the member centroid
/// shift keyframe -> last frame, LowDynamic grouping, ladders, fitted fields and
/// ladder scores.
inline EncodedGof encode_gof(std::span<const Scene> frames, int gof_index, const Box& bounds,
                             const Scene* previous_keyframe, const PipelineConfig& cfg,
                             const SaliencyNet* net = nullptr) {
  cfg.validate();
  require(frames.size() >= 2, "encode_gof: need a keyframe and at least one target frame");
  const Scene& key = frames.front();
  for (const auto& f : frames)
    require(f.size() == key.size(), "encode_gof: frames must share primitive indexing");

  EncodedGof gof;
  gof.index = gof_index;
  gof.frames = static_cast<int>(frames.size());
  gof.keyframe = key;

  auto uniform = uniform_partition(key, cfg.grid, gof_index, bounds);
  gof.uniform_tiles = static_cast<int>(uniform.size());
  std::vector<double> scores;
  if (net) {
    const auto in = make_saliency_input(key, previous_keyframe, uniform, net->cfg.samples_per_tile,
                                        derive_seed(cfg.seed, static_cast<std::uint64_t>(gof_index)));
    scores = evaluate_saliency(*net, in).scores;
  } else {
    scores = oracle_scores(key, previous_keyframe, uniform);
  }
  for (std::size_t i = 0; i < uniform.size(); ++i) uniform[i].saliency = scores[i];

  auto clustered = cluster(uniform, cfg.grid, std::min(cfg.target_tiles, static_cast<int>(uniform.size())));
  gof.tiles = std::move(clustered.tiles);
  gof.merges = clustered.merges;
  gof.cluster_warning = clustered.warning;
  for (auto& t : gof.tiles) t.gof_index = gof_index;

  std::vector<double> raw;
  for (const auto& t : gof.tiles) raw.push_back(t.saliency);
  gof.saliency_norm = normalize_saliency(raw);

  // motion
  const Scene& last = frames.back();
  const auto th = MotionThresholds::for_diagonal(bounds.diagonal(), cfg.static_fraction, cfg.high_fraction);
  gof.motion.resize(gof.tiles.size());
  double disp_sum = 0.0;
  for (std::size_t k = 0; k < gof.tiles.size(); ++k) {
    auto& m = gof.motion[k];
    const auto& ids = gof.tiles[k].primitive_ids;
    m.tile = k;
    m.displacement = detail::ids_centroid(last, ids) - detail::ids_centroid(key, ids);
    m.motion_class = classify_displacement(m.displacement, th);
    gof.tiles[k].motion_class = m.motion_class;
    disp_sum += m.displacement.norm();
    gof.max_displacement = std::max(gof.max_displacement, m.displacement.norm());
  }
  gof.mean_displacement = gof.tiles.empty() ? 0.0 : disp_sum / static_cast<double>(gof.tiles.size());
  const int groups = group_low_dynamic(gof.motion, gof.tiles, cfg.grid, cfg.group_tau);

  LadderCosting costing;
  costing.frames_per_gof = gof.frames;
  for (std::size_t k = 0; k < gof.tiles.size(); ++k)
    gof.tiles[k].ladder = build_ladder(gof.tiles[k], key, gof.saliency_norm[k], cfg.prune, std::nullopt, costing);

  // deformation fields: one per HighDynamic tile, one per LowDynamic group
  std::vector<FitFrame> fit_frames;
  std::vector<int> covered;
  for (int f = cfg.fit_stride; f < gof.frames; f += cfg.fit_stride) covered.push_back(f);
  if (covered.empty() || covered.back() != gof.frames - 1) covered.push_back(gof.frames - 1);
  for (int f : covered)
    fit_frames.push_back({&frames[static_cast<std::size_t>(f)], static_cast<double>(f) / (gof.frames - 1)});

  std::vector<std::vector<std::size_t>> members;  // tiles per field
  std::vector<int> group_field(static_cast<std::size_t>(groups), -1);
  for (std::size_t k = 0; k < gof.tiles.size(); ++k) {
    const auto& m = gof.motion[k];
    if (m.motion_class == MotionClass::HighDynamic) {
      gof.tiles[k].field_id = static_cast<int>(members.size());
      members.push_back({k});
    } else if (m.motion_class == MotionClass::LowDynamic) {
      auto& fid = group_field[static_cast<std::size_t>(m.group)];
      if (fid < 0) {
        fid = static_cast<int>(members.size());
        members.emplace_back();
      }
      gof.tiles[k].field_id = fid;
      members[static_cast<std::size_t>(fid)].push_back(k);
    }
  }
  for (std::size_t f = 0; f < members.size(); ++f) {
    std::vector<std::size_t> ids;
    for (auto k : members[f])
      ids.insert(ids.end(), gof.tiles[k].primitive_ids.begin(), gof.tiles[k].primitive_ids.end());
    std::sort(ids.begin(), ids.end());
    auto field = DeformationField::make(cfg.hash, detail::ids_box(key, ids), cfg.field_hidden,
                                        derive_seed(cfg.seed, (static_cast<std::uint64_t>(gof_index) << 16) + f));
    const auto& first = gof.tiles[members[f].front()];
    field.scope = first.motion_class == MotionClass::HighDynamic ? first.id
                                                                 : gof.motion[members[f].front()].group;
    field.frames = covered;
    gof.fit_reports.push_back(fit(field, key, ids, fit_frames, cfg.fit));
    const double head_share = head_payload_bytes(field) / static_cast<double>(members[f].size());
    for (auto k : members[f]) {
      auto& tile = gof.tiles[k];
      std::array<double, kQualityLevels> bytes{};
      for (int r = 0; r < kQualityLevels; ++r)
        bytes[static_cast<std::size_t>(r)] = head_share + table_payload_bytes(field, key, tile.ladder[r].retained);
      attach_field_cost(tile.ladder, bytes);
    }
    gof.fields.push_back(std::move(field));
  }

  for (auto& t : gof.tiles) {
    score_ladder(t, key, cfg.score_resolution);
    const auto err = check_ladder(t.ladder);
    require(err.empty(), "tile " + std::to_string(t.id) + ": " + err);
  }

  const int probe = gof.frames / 2;
  gof.probe = frames[static_cast<std::size_t>(probe)];
  gof.probe_tau = static_cast<double>(probe) / (gof.frames - 1);
  return gof;
}

/// Splits the sequence into GoFs of cfg.gof_frames (a trailing remainder shorter
/// than two frames is dropped) and encodes each against the sequence bounds.
inline EncodedContent encode_content(std::span<const Scene> frames, const PipelineConfig& cfg,
                                     const SaliencyNet* net = nullptr) {
  cfg.validate();
  require(frames.size() >= 2, "encode: need at least two frames");
  EncodedContent out;
  out.cfg = cfg;
  for (const auto& f : frames) {
    require(!f.empty() && f.size() == frames.front().size(), "encode: frames must be non-empty and share indexing");
    out.bounds.extend(bounding_box(f));
  }
  const auto n = static_cast<int>(frames.size());
  for (int first = 0, g = 0; first + 1 < n; first += cfg.gof_frames, ++g) {
    const int len = std::min(cfg.gof_frames, n - first);
    if (len < 2) break;
    const Scene* prev = g > 0 ? &out.gofs.back().keyframe : nullptr;
    auto gof = encode_gof(frames.subspan(static_cast<std::size_t>(first), static_cast<std::size_t>(len)), g,
                          out.bounds, prev, cfg, net);
    gof.first_frame = first;
    out.gofs.push_back(std::move(gof));
  }
  return out;
}

/// Scene for one tile as the client would hold it at the probe frame: the
/// encoded form runs the deformation field, the reconstructed form is the shipped frame.
inline Scene delivered_tile(const EncodedGof& gof, std::size_t k, int level, bool encoded) {
  const Tile& tile = gof.tiles.at(k);
  if (encoded) return reconstruct_tile(tile, level, gof.keyframe, gof.fields, gof.probe_tau);
  Scene out;
  for (auto id : tile.ladder[level].retained) out.push_back(gof.probe.at(id));
  return out;
}

}  // namespace gsstream
