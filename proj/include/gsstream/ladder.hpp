#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/primitive.hpp"
#include "gsstream/rng.hpp"

namespace gsstream {

inline constexpr int kQualityLevels = 5;

/// Bytes per fully materialized primitive: position 3, rotation 4, scale 3,
/// opacity 1 and 48 color parameters, all float32.
inline constexpr double kBytesPerPrimitive = 59.0 * 4.0;
inline constexpr double kEncodedHeaderBytes = 64.0;

/// Decode-time anchor: a tile of 10,000 retained primitives takes 33 ms per target frame.
inline constexpr double kReferenceTilePrimitives = 10000.0;
inline constexpr double kReferenceDecodeSeconds = 0.033;

enum class MotionClass { Static, LowDynamic, HighDynamic };

inline const char* to_string(MotionClass c) {
  switch (c) {
    case MotionClass::Static: return "static";
    case MotionClass::LowDynamic: return "low_dynamic";
    case MotionClass::HighDynamic: return "high_dynamic";
  }
  return "?";
}

struct LadderLevel {
  int level = 0;
  double cumulative_prune_fraction = 0.0;
  std::vector<std::size_t> retained;  // scene primitive ids, ascending
  double size_encoded_bytes = 0.0;
  double size_reconstructed_bytes = 0.0;
  double decode_time_s = 0.0;
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
};

struct QualityLadder {
  std::array<LadderLevel, kQualityLevels> levels;

  const LadderLevel& operator[](int r) const { return levels.at(static_cast<std::size_t>(r)); }
  LadderLevel& operator[](int r) { return levels.at(static_cast<std::size_t>(r)); }
};

struct Tile {
  int id = 0;
  int gof_index = 0;
  Box bbox;
  std::vector<std::size_t> primitive_ids;
  double saliency = 0.0;
  MotionClass motion_class = MotionClass::Static;
  QualityLadder ladder;
  std::vector<int> cells;  // uniform grid cells covered (one for uniform tiles)
  int field_id = -1;       // deformation field serving this tile, -1 when none
};

inline Vec3 centroid(const Tile& tile, const Scene& scene) {
  Vec3 c = Vec3::Zero();
  for (auto id : tile.primitive_ids) c += scene.at(id).position;
  return tile.primitive_ids.empty() ? c : Vec3(c / static_cast<double>(tile.primitive_ids.size()));
}

struct PruneConfig {
  double p_base = 0.15;
  double p_min = 0.08;
  double ceiling_hi = 0.30;  // lowest-level ceiling for the most salient tile
  double ceiling_lo = 0.50;  // lowest-level ceiling for the least salient tile

  /// alpha chosen so that a fully salient tile prunes exactly p_min per level.
  double alpha() const { return 1.0 - p_min / p_base; }

  void validate() const {
    require(p_min > 0.0 && p_min <= p_base && p_base < 1.0, "prune config requires 0 < p_min <= p_base < 1");
    require(ceiling_hi <= ceiling_lo, "prune config requires ceiling_hi <= ceiling_lo");
    require(ceiling_hi >= 0.0 && ceiling_lo < 1.0, "prune ceilings must lie in [0, 1)");
  }
};

/// Normalized sampling probabilities w_i / sum(w). All-zero weights fall back to uniform.
inline std::vector<double> sample_probabilities(std::span<const double> weights) {
  require(!weights.empty(), "sample_probabilities: empty tile");
  double total = 0.0;
  for (double w : weights) {
    require(std::isfinite(w) && w >= 0.0, "sample_probabilities: weights must be finite and non-negative");
    total += w;
  }
  std::vector<double> p(weights.size());
  if (total <= 0.0) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(weights.size()));
    return p;
  }
  for (std::size_t i = 0; i < weights.size(); ++i) p[i] = weights[i] / total;
  return p;
}

inline std::vector<double> tile_weights(const Tile& tile, const Scene& scene) {
  std::vector<double> w;
  w.reserve(tile.primitive_ids.size());
  for (auto id : tile.primitive_ids) w.push_back(render_weight(scene.at(id)));
  return w;
}

inline std::vector<double> sample_probabilities(const Tile& tile, const Scene& scene) {
  return sample_probabilities(tile_weights(tile, scene));
}

/// Min-max normalization of tile scores within one GoF; a constant score set maps to zeros.
inline std::vector<double> normalize_saliency(std::span<const double> scores) {
  std::vector<double> out(scores.size(), 0.0);
  if (scores.empty()) return out;
  const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  const double span = *mx - *mn;
  if (!(span > 0.0)) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - *mn) / span;
  return out;
}

inline double adjusted_prune_rate(double saliency_norm, const PruneConfig& cfg) {
  cfg.validate();
  require(saliency_norm >= 0.0 && saliency_norm <= 1.0, "normalized saliency must lie in [0, 1]");
  return cfg.p_base * (1.0 - saliency_norm * cfg.alpha());
}

/// Ceiling on cumulative pruning, interpolated between ceiling_lo (S=0) and ceiling_hi (S=1).
inline double prune_ceiling(double saliency_norm, const PruneConfig& cfg) {
  return cfg.ceiling_hi + (1.0 - saliency_norm) * (cfg.ceiling_lo - cfg.ceiling_hi);
}

inline double cumulative_prune_fraction(int level, double saliency_norm, const PruneConfig& cfg) {
  if (level <= 0) return 0.0;
  return std::min(level * adjusted_prune_rate(saliency_norm, cfg), prune_ceiling(saliency_norm, cfg));
}

/// Number of primitives kept out of n after pruning `fraction`, never below one.
inline std::size_t retained_count(std::size_t n, double fraction) {
  const double keep = std::floor(static_cast<double>(n) * (1.0 - fraction) + 1e-9);
  return std::max<std::size_t>(1, std::min(n, static_cast<std::size_t>(std::max(0.0, keep))));
}

/// Weighted sampling without replacement (Efraimidis-Spirakis keys u^(1/w)).
/// Returns positions into `weights` ordered from first-kept to first-dropped.
inline std::vector<std::size_t> weighted_keep_order(std::span<const double> weights, Rng& rng) {
  const auto p = sample_probabilities(weights);
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double u = std::max(rng.uniform(), 1e-300);
    const double key = p[i] > 0.0 ? std::log(u) / p[i] : -std::numeric_limits<double>::infinity();
    keyed.emplace_back(key, i);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> order;
  order.reserve(keyed.size());
  for (const auto& k : keyed) order.push_back(k.second);
  return order;
}

/// Draws up to `count` primitive ids from the tile, favoring high rendering weight.
inline std::vector<std::size_t> sample_primitives(const Tile& tile, const Scene& scene, std::size_t count, Rng& rng) {
  const auto order = weighted_keep_order(tile_weights(tile, scene), rng);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < order.size() && i < count; ++i) ids.push_back(tile.primitive_ids[order[i]]);
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct LadderCosting {
  int frames_per_gof = 30;
  double decode_seconds_per_primitive = kReferenceDecodeSeconds / kReferenceTilePrimitives;
};

/// Builds the five-level ladder. Level 0 keeps the whole tile; deeper levels drop
/// primitives in ascending rendering-weight order (or by seeded weighted sampling
/// when `sampling_seed` is set), so retained sets are nested.
/// Encoded sizes cover the keyframe only; call attach_field_cost once fields exist.
inline QualityLadder build_ladder(const Tile& tile, const Scene& scene, double saliency_norm,
                                  const PruneConfig& cfg, std::optional<std::uint64_t> sampling_seed = std::nullopt,
                                  const LadderCosting& costing = {}) {
  require(!tile.primitive_ids.empty(), "build_ladder: empty tile");
  require(costing.frames_per_gof >= 1, "build_ladder: frames_per_gof must be >= 1");
  cfg.validate();
  const auto weights = tile_weights(tile, scene);
  const std::size_t n = weights.size();

  std::vector<std::size_t> keep_order;  // positions, most important first
  if (sampling_seed) {
    Rng rng(*sampling_seed);
    keep_order = weighted_keep_order(weights, rng);
  } else {
    keep_order.resize(n);
    std::iota(keep_order.begin(), keep_order.end(), 0);
    std::stable_sort(keep_order.begin(), keep_order.end(), [&](std::size_t a, std::size_t b) {
      if (weights[a] != weights[b]) return weights[a] > weights[b];
      return tile.primitive_ids[a] < tile.primitive_ids[b];
    });
  }

  QualityLadder ladder;
  for (int r = 0; r < kQualityLevels; ++r) {
    auto& lv = ladder[r];
    lv.level = r;
    lv.cumulative_prune_fraction = cumulative_prune_fraction(r, saliency_norm, cfg);
    const std::size_t keep = r == 0 ? n : retained_count(n, lv.cumulative_prune_fraction);
    lv.retained.clear();
    for (std::size_t i = 0; i < keep; ++i) lv.retained.push_back(tile.primitive_ids[keep_order[i]]);
    std::sort(lv.retained.begin(), lv.retained.end());
    const double frame_bytes = kBytesPerPrimitive * static_cast<double>(keep);
    lv.size_reconstructed_bytes = frame_bytes * costing.frames_per_gof;
    lv.size_encoded_bytes = std::min(frame_bytes + kEncodedHeaderBytes, lv.size_reconstructed_bytes);
    lv.decode_time_s = costing.decode_seconds_per_primitive * static_cast<double>(keep);
  }
  ladder[0].psnr_db = 100.0;
  ladder[0].ssim = 1.0;
  return ladder;
}

/// Adds deformation-field payload (already divided among sharing tiles) to the
/// encoded sizes. When a field costs more than shipping the frames themselves the
/// encoded version falls back to the reconstructed payload.
inline void attach_field_cost(QualityLadder& ladder, std::span<const double> field_bytes_per_level) {
  require(field_bytes_per_level.size() == kQualityLevels, "attach_field_cost: need one entry per level");
  for (int r = 0; r < kQualityLevels; ++r) {
    auto& lv = ladder[r];
    const double keyframe = kBytesPerPrimitive * static_cast<double>(lv.retained.size());
    lv.size_encoded_bytes =
        std::min(keyframe + field_bytes_per_level[static_cast<std::size_t>(r)] + kEncodedHeaderBytes,
                 lv.size_reconstructed_bytes);
  }
}

/// Structural invariants of a ladder; returns an empty string when all hold.
inline std::string check_ladder(const QualityLadder& ladder) {
  if (ladder[0].cumulative_prune_fraction != 0.0) return "level 0 prune fraction must be 0";
  for (int r = 0; r < kQualityLevels; ++r) {
    const auto& lv = ladder[r];
    if (lv.retained.empty()) return "empty retained set";
    if (lv.size_encoded_bytes > lv.size_reconstructed_bytes) return "encoded size exceeds reconstructed size";
    if (r == 0) continue;
    const auto& up = ladder[r - 1];
    if (lv.cumulative_prune_fraction < up.cumulative_prune_fraction) return "prune fraction decreases";
    if (!std::includes(up.retained.begin(), up.retained.end(), lv.retained.begin(), lv.retained.end()))
      return "retained sets are not nested";
  }
  return {};
}

}  // namespace gsstream
