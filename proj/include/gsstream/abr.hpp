#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/qoe.hpp"
#include "gsstream/renderer.hpp"

namespace gsstream {

/// Everything a decision for one GoF is scored against.
struct GofProblem {
  std::vector<TileQoEInputs> tiles;
  double bytes_per_s = 0.0;  // B_t held at request time
  double buffer_s = 0.0;     // L_{t-1}
  QoEConfig cfg;
  int levels = kQualityLevels;  // usable ladder depth (levels 0..levels-1)

  double budget_bytes() const { return bytes_per_s * cfg.gof_seconds; }

  void validate() const {
    cfg.validate();
    require(levels >= 1 && levels <= kQualityLevels, "GoF problem: usable levels must lie in [1, 5]");
    require(bytes_per_s >= 0.0, "GoF problem: bandwidth must be non-negative");
    require(buffer_s >= 0.0, "GoF problem: buffer must be non-negative");
  }
};

struct GofOutcome {
  double q_geo = 0.0;
  double q_render = 0.0;
  TransmitTimes transmit;
  double decode_s = 0.0;  // T_D
  double ready_s = 0.0;   // T_U
  StallResult stall;
  double qoe = 0.0;
  double bytes = 0.0;
};

/// Bytes of every transmitted tile.
inline double decision_bytes(std::span<const TileQoEInputs> tiles, const Decision& d) {
  require(d.tiles.size() == tiles.size(), "decision and tile table sizes differ");
  double b = 0.0;
  for (std::size_t k = 0; k < tiles.size(); ++k) b += action_bytes(d.tiles[k], tiles[k]);
  return b;
}

/// Runs the timing, stall and QoE chain for one GoF under config weights.
/// `ssim_fov` replaces the ladder SSIM when the viewport was rendered.
inline GofOutcome evaluate_gof(const GofProblem& p, const Decision& d, const QoEWeights& w,
                               double ssim_fov = std::numeric_limits<double>::quiet_NaN()) {
  GofOutcome o;
  o.q_geo = q_geo(p.tiles, d);
  o.q_render = q_render(p.tiles, d, ssim_fov);
  o.transmit = transmit_times(p.tiles, d, p.bytes_per_s);
  o.decode_s = decode_time(p.tiles, d, p.cfg.cores);
  o.ready_s = ready_time(o.transmit.encoded, o.transmit.reconstructed, o.decode_s);
  o.stall = stall(o.ready_s, p.cfg.gof_seconds, p.buffer_s, p.cfg.buffer_max_s);
  o.qoe = qoe(o.q_geo, o.q_render, o.stall.duration, o.stall.event, w, p.cfg.alpha_mix);
  o.bytes = decision_bytes(p.tiles, d);
  return o;
}

inline GofOutcome evaluate_gof(const GofProblem& p, const Decision& d) { return evaluate_gof(p, d, p.cfg.weights); }

/// Planning objective used by the heuristics: GoF QoE under config weights.
inline double planning_qoe(const GofProblem& p, const Decision& d) { return evaluate_gof(p, d).qoe; }

struct Feasibility {
  bool ok = false;
  double slack = 0.0;  // budget minus bytes
};

/// One-hot selector per tile, usable levels only, and total bytes within B_t * T_I (inclusive).
inline Feasibility feasible(const GofProblem& p, const Decision& d) {
  Feasibility f;
  f.slack = p.budget_bytes() - decision_bytes(p.tiles, d);
  bool levels_ok = selector_valid(d);
  for (const auto& a : d.tiles) levels_ok = levels_ok && (!a.transmit || a.level < p.levels);
  f.ok = levels_ok && f.slack >= 0.0;
  return f;
}

inline Decision empty_decision(std::size_t tiles) { return Decision{std::vector<TileAction>(tiles)}; }

/// Exhaustive optimum of planning_qoe over feasible decisions: each visible
/// tile is skipped or shipped at any usable level in either mode; invisible
/// tiles are skipped. Ties keep the first decision in enumeration order.
inline Decision exhaustive_best(const GofProblem& p) {
  p.validate();
  std::vector<std::size_t> visible;
  for (std::size_t k = 0; k < p.tiles.size(); ++k)
    if (p.tiles[k].visible) visible.push_back(k);
  const int options = 1 + 2 * p.levels;
  require(std::pow(static_cast<double>(options), static_cast<double>(visible.size())) <= 5e6,
          "exhaustive_best: instance too large to enumerate");
  Decision cur = empty_decision(p.tiles.size());
  Decision best = cur;
  double best_q = planning_qoe(p, cur);
  std::vector<int> digit(visible.size(), 0);
  while (true) {
    std::size_t i = 0;
    while (i < digit.size() && ++digit[i] == options) digit[i++] = 0;
    if (i == digit.size()) break;
    for (std::size_t j = 0; j < visible.size(); ++j) {
      auto& a = cur.tiles[visible[j]];
      a.transmit = digit[j] > 0;
      a.encoded = digit[j] > p.levels;
      a.level = a.transmit ? (digit[j] - 1) % p.levels : 0;
    }
    if (!feasible(p, cur).ok) continue;
    const double q = planning_qoe(p, cur);
    if (q > best_q) best_q = q, best = cur;
  }
  return best;
}

namespace detail {

struct Move {
  std::size_t tile = 0;
  TileAction action;
  double gain = 0.0;   // objective change
  double bytes = 0.0;  // byte change
};

/// Cheapest minimal shipping of a tile: lowest usable level, reconstructed if
/// it fits, else encoded.
inline std::optional<TileAction> entry_action(const GofProblem& p, std::size_t k, double room) {
  const int low = p.levels - 1;
  for (bool enc : {false, true}) {
    const TileAction a{true, enc, low};
    if (action_bytes(a, p.tiles[k]) <= room) return a;
  }
  return std::nullopt;
}

/// Every action a visible tile can take at the usable depth.
inline std::vector<TileAction> tile_actions(const GofProblem& p) {
  std::vector<TileAction> out{TileAction{}};
  for (bool enc : {false, true})
    for (int r = 0; r < p.levels; ++r) out.push_back({true, enc, r});
  return out;
}

/// Pairwise exchange: apply the best feasible joint reassignment of any two
/// visible tiles (or one) while it raises the objective.
inline void exchange_pass(const GofProblem& p, Decision& d) {
  const auto acts = tile_actions(p);
  std::vector<std::size_t> vis;
  for (std::size_t k = 0; k < p.tiles.size(); ++k)
    if (p.tiles[k].visible) vis.push_back(k);
  while (true) {
    const double base = planning_qoe(p, d);
    double best_q = base;
    Decision best = d;
    for (std::size_t i = 0; i < vis.size(); ++i)
      for (std::size_t j = i; j < vis.size(); ++j) {
        Decision c = d;
        for (const auto& a : acts)
          for (const auto& b : acts) {
            c.tiles[vis[i]] = a;
            if (j != i) c.tiles[vis[j]] = b;
            if (decision_bytes(p.tiles, c) > p.budget_bytes()) continue;
            const double q = planning_qoe(p, c);
            if (q > best_q) best_q = q, best = c;
          }
      }
    if (!(best_q > base)) return;
    d = best;
  }
}

}  // namespace detail

struct GreedyResult {
  Decision decision;
  std::vector<std::size_t> unaffordable;  // visible tiles left out for lack of budget
};

/// Greedy baseline. Visible tiles start at the lowest level (reconstructed if
/// affordable, else encoded, else skipped); then the single feasible upgrade
/// with the best objective gain per byte is applied until none improves the
/// objective. Upgrades are level - 1, a mode flip, or adding a skipped tile.
/// Moves that free bytes without losing quality rank first. A pairwise
/// exchange pass then escapes the knapsack traps pure upgrading gets stuck in.
inline GreedyResult greedy_baseline(const GofProblem& p) {
  p.validate();
  GreedyResult res;
  res.decision = empty_decision(p.tiles.size());
  auto& d = res.decision;
  double room = p.budget_bytes();
  for (std::size_t k = 0; k < p.tiles.size(); ++k) {
    if (!p.tiles[k].visible) continue;
    if (auto a = detail::entry_action(p, k, room)) {
      d.tiles[k] = *a;
      room -= action_bytes(*a, p.tiles[k]);
    }
  }

  auto better = [](const detail::Move& a, const detail::Move& b) {
    // free moves (no extra bytes) first, by gain; then by gain per byte
    const bool fa = a.bytes <= 0.0, fb = b.bytes <= 0.0;
    if (fa != fb) return fa;
    if (fa) return a.gain != b.gain ? a.gain > b.gain : a.bytes < b.bytes;
    return a.gain * b.bytes > b.gain * a.bytes;
  };
  while (true) {
    const double base = planning_qoe(p, d);
    const double used = decision_bytes(p.tiles, d);
    std::optional<detail::Move> best;
    for (std::size_t k = 0; k < p.tiles.size(); ++k) {
      if (!p.tiles[k].visible) continue;
      const TileAction cur = d.tiles[k];
      std::vector<TileAction> cand;
      if (!cur.transmit) {
        cand.push_back({true, false, p.levels - 1});
        cand.push_back({true, true, p.levels - 1});
      } else {
        if (cur.level > 0) cand.push_back({true, cur.encoded, cur.level - 1});
        cand.push_back({true, !cur.encoded, cur.level});
      }
      for (const auto& a : cand) {
        d.tiles[k] = a;
        const double bytes = decision_bytes(p.tiles, d);
        if (bytes <= p.budget_bytes()) {
          const detail::Move m{k, a, planning_qoe(p, d) - base, bytes - used};
          const bool useful = m.gain > 0.0 || (m.gain == 0.0 && m.bytes < 0.0);
          if (useful && (!best || better(m, *best))) best = m;
        }
        d.tiles[k] = cur;
      }
    }
    if (!best) break;
    d.tiles[best->tile] = best->action;
  }
  detail::exchange_pass(p, d);
  for (std::size_t k = 0; k < p.tiles.size(); ++k)
    if (p.tiles[k].visible && !d.tiles[k].transmit) res.unaffordable.push_back(k);
  return res;
}

/// Downgrades the transmitted tile move with the smallest objective loss per
/// byte saved (level + 1, switch to the smaller mode, or skip) until the
/// decision fits the budget. Also clamps levels beyond the usable depth.
inline Decision project_feasible(const GofProblem& p, Decision d) {
  require(d.tiles.size() == p.tiles.size(), "projection: decision and tile table sizes differ");
  for (auto& a : d.tiles) {
    if (!a.transmit) a = TileAction{};
    a.level = std::clamp(a.level, 0, p.levels - 1);
  }
  while (decision_bytes(p.tiles, d) > p.budget_bytes()) {
    const double base = planning_qoe(p, d);
    const double used = decision_bytes(p.tiles, d);
    std::optional<detail::Move> best;
    for (std::size_t k = 0; k < p.tiles.size(); ++k) {
      const TileAction cur = d.tiles[k];
      if (!cur.transmit) continue;
      std::vector<TileAction> cand;
      if (cur.level + 1 < p.levels) cand.push_back({true, cur.encoded, cur.level + 1});
      cand.push_back({true, !cur.encoded, cur.level});
      cand.push_back(TileAction{});
      for (const auto& a : cand) {
        d.tiles[k] = a;
        const double saved = used - decision_bytes(p.tiles, d);
        if (saved > 0.0) {
          const detail::Move m{k, a, base - planning_qoe(p, d), saved};
          // smallest loss per byte; ties by tile id then candidate order
          if (!best || m.gain * best->bytes < best->gain * m.bytes) best = m;
        }
        d.tiles[k] = cur;
      }
    }
    require(best.has_value(), "projection: no downgrade reduces the payload");
    d.tiles[best->tile] = best->action;
  }
  return d;
}

/// Session history the state is assembled from.
struct SessionHistory {
  std::vector<Camera> poses;             // viewport poses, oldest first
  std::vector<double> bandwidth_mbps;    // observed throughput samples, oldest first
  double buffer_s = 0.0;                 // L_{t-1}
  double mean_displacement = 0.0;        // content descriptor C_t
  double max_displacement = 0.0;
  double decode_primitives = 0.0;        // sum of e * N over encoded visible tiles of the last GoF
};

/// Normalization scales of the state fields; every field is clamped to [-1, 1].
struct StateScales {
  double position = 5.0;
  double angle = std::numbers::pi;
  double bandwidth_mbps = 1200.0;
  double displacement = 1.0;
  double decode_primitives = 1e5;
  int bandwidth_window = 5;
};

inline constexpr int kTrajectoryPoses = 5;
inline constexpr int kGlobalStateFeatures = kTrajectoryPoses * 6 + 3 + 1 + 2 + 1;
inline constexpr int kTaskFeatures = 5;

struct SessionState {
  std::array<double, kTrajectoryPoses * 6> trajectory{};  // (x, y, z, pitch, yaw, roll) per pose, newest last
  std::array<double, 3> bandwidth{};                      // last, mean, variance
  double buffer = 0.0;
  std::array<double, 2> content{};  // mean, max displacement
  double decode_load = 0.0;
  std::vector<double> saliency;

  std::array<double, kGlobalStateFeatures> global_features() const {
    std::array<double, kGlobalStateFeatures> f{};
    std::size_t i = 0;
    for (double v : trajectory) f[i++] = v;
    for (double v : bandwidth) f[i++] = v;
    f[i++] = buffer;
    for (double v : content) f[i++] = v;
    f[i++] = decode_load;
    return f;
  }

  /// Task descriptor fed to the embedding: content then bandwidth statistics.
  std::array<double, kTaskFeatures> task_features() const {
    return {content[0], content[1], bandwidth[0], bandwidth[1], bandwidth[2]};
  }
};

inline SessionState build_state(const SessionHistory& h, std::span<const double> saliency, double buffer_max_s,
                                const StateScales& sc = {}) {
  auto clip = [](double v) { return std::clamp(v, -1.0, 1.0); };
  SessionState s;
  const std::size_t n = h.poses.size();
  for (int j = 0; j < kTrajectoryPoses; ++j) {
    // zero padding when fewer than five poses are known
    const int idx = static_cast<int>(n) - kTrajectoryPoses + j;
    if (idx < 0) continue;
    const auto& c = h.poses[static_cast<std::size_t>(idx)];
    const std::array<double, 6> v{c.position.x() / sc.position, c.position.y() / sc.position,
                                  c.position.z() / sc.position, c.pitch / sc.angle,
                                  c.yaw / sc.angle,            c.roll / sc.angle};
    for (int q = 0; q < 6; ++q) s.trajectory[static_cast<std::size_t>(j * 6 + q)] = clip(v[static_cast<std::size_t>(q)]);
  }
  if (!h.bandwidth_mbps.empty()) {
    const std::size_t w = std::min(h.bandwidth_mbps.size(), static_cast<std::size_t>(sc.bandwidth_window));
    const auto first = h.bandwidth_mbps.end() - static_cast<std::ptrdiff_t>(w);
    double mean = 0.0;
    for (auto it = first; it != h.bandwidth_mbps.end(); ++it) mean += *it;
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (auto it = first; it != h.bandwidth_mbps.end(); ++it) var += (*it - mean) * (*it - mean);
    var /= static_cast<double>(w);
    s.bandwidth = {clip(h.bandwidth_mbps.back() / sc.bandwidth_mbps), clip(mean / sc.bandwidth_mbps),
                   clip(var / (sc.bandwidth_mbps * sc.bandwidth_mbps))};
  }
  s.buffer = buffer_max_s > 0.0 ? clip(h.buffer_s / buffer_max_s) : 0.0;
  s.content = {clip(h.mean_displacement / sc.displacement), clip(h.max_displacement / sc.displacement)};
  s.decode_load = clip(h.decode_primitives / sc.decode_primitives);
  for (double v : saliency) s.saliency.push_back(clip(v));
  return s;
}

/// Buffer-threshold baseline: L < 1 s picks level 4, L < 2 s level 2, else
/// level 0, for every visible tile; encoded unless decoding all visible tiles
/// would exceed the C * T_I core budget. The result is projected onto the budget.
inline Decision buffer_baseline(const GofProblem& p) {
  p.validate();
  const int wanted = p.buffer_s < 1.0 ? 4 : (p.buffer_s < 2.0 ? 2 : 0);
  const int level = std::min(wanted, p.levels - 1);
  double decode = 0.0;
  for (const auto& t : p.tiles)
    if (t.visible) decode += t.decode_s[static_cast<std::size_t>(level)];
  const bool encoded = decode <= p.cfg.cores * p.cfg.gof_seconds;
  Decision d = empty_decision(p.tiles.size());
  for (std::size_t k = 0; k < p.tiles.size(); ++k)
    if (p.tiles[k].visible) d.tiles[k] = TileAction{true, encoded, level};
  return project_feasible(p, d);
}

}  // namespace gsstream
