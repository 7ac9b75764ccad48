#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/ladder.hpp"

namespace gsstream {

/// The four weights that the learned policy may re-parameterize.
struct QoEWeights {
  double lambda = 1.0;   // quality
  double mu = 10.0;      // stall seconds
  double sigma_w = 5.0;  // stall events
  double eta = 0.5;      // smoothness
};

struct QoEConfig {
  QoEWeights weights;
  double alpha_mix = 0.5;     // geometric vs rendering quality
  double gamma_sal = 4.0;     // salience scale inside the spatial influence term
  double beta_att = 1.0;      // distance attenuation
  double delta_smooth = 0.5;  // geometric share of the smoothness penalty
  double gof_seconds = 1.0;   // T_I
  int cores = 4;              // client decode cores C
  double buffer_max_s = 3.0;

  void validate() const {
    const auto& w = weights;
    require(w.lambda >= 0 && w.mu >= 0 && w.sigma_w >= 0 && w.eta >= 0, "QoE weights must be non-negative");
    require(alpha_mix >= 0 && alpha_mix <= 1, "alpha_mix must lie in [0, 1]");
    require(delta_smooth >= 0 && delta_smooth <= 1, "delta_smooth must lie in [0, 1]");
    require(gamma_sal >= 0 && beta_att >= 0, "gamma_sal and beta_att must be non-negative");
    require(gof_seconds > 0, "GoF duration must be positive");
    require(cores >= 1, "core count must be >= 1");
    require(buffer_max_s >= 0, "buffer capacity must be non-negative");
  }
};

/// Spatial influence of a tile: visibility scaled by a logistic salience weight.
inline double phi(double s, double v, double gamma_sal) {
  require(v >= 0.0 && v <= 1.0, "phi: visibility must lie in [0, 1]");
  return v / (1.0 + std::exp(-gamma_sal * s));
}

/// Occlusion attenuation: mean member opacity damped by relative viewing distance.
inline double psi(std::span<const double> opacities, double d, double d_max, double beta_att) {
  require(!opacities.empty(), "psi: tile has no primitives");
  require(d_max > 0.0, "psi: d_max must be positive");
  double total = 0.0;
  for (double a : opacities) total += a;
  return total / static_cast<double>(opacities.size()) * std::exp(-beta_att * d / d_max);
}

/// Per-tile inputs the QoE terms and the ABR policies read for one GoF.
struct TileQoEInputs {
  bool visible = false;  // viewport indicator f
  double visibility = 0.0;
  double saliency = 0.0;
  double phi = 0.0;
  double psi = 0.0;
  std::array<double, kQualityLevels> psnr{};
  std::array<double, kQualityLevels> ssim{};
  std::array<double, kQualityLevels> size_encoded{};
  std::array<double, kQualityLevels> size_reconstructed{};
  std::array<double, kQualityLevels> decode_s{};
  std::array<double, kQualityLevels> primitives{};

  static TileQoEInputs from_ladder(const QualityLadder& ladder) {
    TileQoEInputs t;
    for (int r = 0; r < kQualityLevels; ++r) {
      const auto& lv = ladder[r];
      t.psnr[r] = lv.psnr_db;
      t.ssim[r] = lv.ssim;
      t.size_encoded[r] = lv.size_encoded_bytes;
      t.size_reconstructed[r] = lv.size_reconstructed_bytes;
      t.decode_s[r] = lv.decode_time_s;
      t.primitives[r] = static_cast<double>(lv.retained.size());
    }
    return t;
  }
};

/// Action for one tile: skip, or ship quality `level` in encoded (e = 1) or reconstructed (e = 0) form.
struct TileAction {
  bool transmit = false;
  bool encoded = false;
  int level = 0;

  friend bool operator==(const TileAction&, const TileAction&) = default;
};

struct Decision {
  std::vector<TileAction> tiles;

  friend bool operator==(const Decision&, const Decision&) = default;
};

/// One-hot quality selector x_{k,r}; skipped tiles have an all-zero row.
inline std::vector<std::array<int, kQualityLevels>> selector(const Decision& d) {
  std::vector<std::array<int, kQualityLevels>> x(d.tiles.size());
  for (std::size_t k = 0; k < d.tiles.size(); ++k) {
    x[k].fill(0);
    const auto& a = d.tiles[k];
    if (a.transmit && a.level >= 0 && a.level < kQualityLevels) x[k][static_cast<std::size_t>(a.level)] = 1;
  }
  return x;
}

/// Exactly one quality per transmitted tile and none for skipped tiles.
inline bool selector_valid(const Decision& d) {
  const auto x = selector(d);
  for (std::size_t k = 0; k < d.tiles.size(); ++k) {
    int sum = 0;
    for (int v : x[k]) sum += v;
    if (sum != (d.tiles[k].transmit ? 1 : 0)) return false;
  }
  return true;
}

inline double action_bytes(const TileAction& a, const TileQoEInputs& t) {
  if (!a.transmit) return 0.0;
  const auto r = static_cast<std::size_t>(a.level);
  return a.encoded ? t.size_encoded.at(r) : t.size_reconstructed.at(r);
}

namespace detail {
inline void check_shapes(const Decision& d, std::span<const TileQoEInputs> tiles) {
  require(d.tiles.size() == tiles.size(), "decision and tile table sizes differ");
  for (const auto& a : d.tiles)
    require(!a.transmit || (a.level >= 0 && a.level < kQualityLevels), "decision selects a missing ladder level");
}
}  // namespace detail

inline double q_geo(std::span<const TileQoEInputs> tiles, const Decision& d) {
  detail::check_shapes(d, tiles);
  double q = 0.0;
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const auto& a = d.tiles[k];
    if (!a.transmit) continue;
    const double p = tiles[k].psnr[static_cast<std::size_t>(a.level)];
    require(std::isfinite(p), "q_geo: ladder level has no PSNR");
    q += p * tiles[k].phi;
  }
  return q;
}

/// Rendering quality. Each transmitted tile contributes ssim * phi * psi, where
/// ssim is the viewport SSIM when given, else the tile's own ladder SSIM.
inline double q_render(std::span<const TileQoEInputs> tiles, const Decision& d,
                       double ssim_fov = std::numeric_limits<double>::quiet_NaN()) {
  detail::check_shapes(d, tiles);
  double q = 0.0;
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const auto& a = d.tiles[k];
    if (!a.transmit) continue;
    const double s = std::isnan(ssim_fov) ? tiles[k].ssim[static_cast<std::size_t>(a.level)] : ssim_fov;
    require(std::isfinite(s), "q_render: ladder level has no SSIM");
    q += s * tiles[k].phi * tiles[k].psi;
  }
  return q;
}

/// Client decode time of encoded visible tiles, spread over `cores`.
inline double decode_time(std::span<const TileQoEInputs> tiles, const Decision& d, int cores) {
  detail::check_shapes(d, tiles);
  require(cores >= 1, "decode_time: core count must be >= 1");
  double t = 0.0;
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const auto& a = d.tiles[k];
    if (a.transmit && a.encoded && tiles[k].visible) t += tiles[k].decode_s[static_cast<std::size_t>(a.level)];
  }
  return t / cores;
}

struct TransmitTimes {
  double reconstructed = 0.0;  // T_R
  double encoded = 0.0;        // T_E
  double total = 0.0;          // T_S
};

inline double mbps_to_bytes_per_s(double mbps) { return mbps * 1e6 / 8.0; }

/// Download times of the visible transmitted tiles at `bytes_per_s`; a
/// non-positive bandwidth makes any non-empty payload take forever.
inline TransmitTimes transmit_times(std::span<const TileQoEInputs> tiles, const Decision& d, double bytes_per_s) {
  detail::check_shapes(d, tiles);
  double bytes_r = 0.0, bytes_e = 0.0;
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const auto& a = d.tiles[k];
    if (!a.transmit || !tiles[k].visible) continue;
    (a.encoded ? bytes_e : bytes_r) += action_bytes(a, tiles[k]);
  }
  auto seconds = [&](double bytes) {
    if (bytes <= 0.0) return 0.0;
    return bytes_per_s > 0.0 ? bytes / bytes_per_s : std::numeric_limits<double>::infinity();
  };
  TransmitTimes t;
  t.reconstructed = seconds(bytes_r);
  t.encoded = seconds(bytes_e);
  t.total = t.reconstructed + t.encoded;
  return t;
}

/// Pipelined readiness: encoded tiles first, then reconstructed download overlaps decoding.
inline double ready_time(double t_encoded, double t_reconstructed, double t_decode) {
  require(t_encoded >= 0 && t_reconstructed >= 0 && t_decode >= 0, "ready_time: negative component");
  return t_encoded + std::max(t_reconstructed, t_decode);
}

struct StallResult {
  double duration = 0.0;  // P_d
  int event = 0;          // P_f
  double buffer = 0.0;    // L after this GoF
};

inline StallResult stall(double t_ready, double gof_seconds, double buffer_prev, double buffer_max) {
  require(buffer_prev >= 0.0, "stall: buffer must be non-negative");
  StallResult s;
  s.duration = std::max(0.0, t_ready - gof_seconds - buffer_prev);
  s.event = s.duration > 0.0 ? 1 : 0;
  s.buffer = std::min(buffer_max, std::max(0.0, buffer_prev + gof_seconds - t_ready));
  return s;
}

inline double qoe(double q_geo_value, double q_render_value, double stall_s, int stall_event, const QoEWeights& w,
                  double alpha_mix) {
  return w.lambda * (alpha_mix * q_geo_value + (1.0 - alpha_mix) * q_render_value) - w.mu * stall_s -
         w.sigma_w * stall_event;
}

inline double qoe(double q_geo_value, double q_render_value, double stall_s, int stall_event, const QoEConfig& cfg) {
  return qoe(q_geo_value, q_render_value, stall_s, stall_event, cfg.weights, cfg.alpha_mix);
}

inline double smoothness_penalty(double q_geo_prev, double q_geo_cur, double q_render_prev, double q_render_cur,
                                 double delta) {
  return delta * std::abs(q_geo_cur - q_geo_prev) + (1.0 - delta) * std::abs(q_render_cur - q_render_prev);
}

/// Per-GoF reward: QoE minus eta times the smoothness penalty.
inline double reward(double qoe_value, double smoothness, const QoEWeights& w) { return qoe_value - w.eta * smoothness; }

}  // namespace gsstream
