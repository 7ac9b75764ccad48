#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsstream/abr.hpp"
#include "gsstream/pipeline.hpp"
#include "gsstream/policy.hpp"
#include "gsstream/qoe.hpp"
#include "gsstream/renderer.hpp"
#include "gsstream/traces.hpp"

namespace gsstream {

struct SessionConfig {
  int gofs = 20;
  QoEConfig qoe;
  int viewport_width = 64;
  int viewport_height = 64;
  double viewport_fov = std::numbers::pi / 3;
  double fov_noise_rad = 0.0;    // std of the angular error of the predicted viewport
  double stall_timeout_s = 1.0;  // stall charged when a GoF with visible content receives nothing
  bool render_viewport = true;   // SSIM_fov from the composited viewport; ladder SSIM otherwise
  std::uint64_t seed = 1;

  void validate() const {
    require(gofs >= 1, "session needs at least one GoF");
    qoe.validate();
    require(viewport_width >= 16 && viewport_height >= 16, "viewport must be at least 16x16");
    require(fov_noise_rad >= 0.0 && stall_timeout_s > 0.0, "bad session noise or timeout");
  }

  Camera intrinsics() const {
    Camera c;
    c.width = viewport_width;
    c.height = viewport_height;
    c.fov_x = c.fov_y = viewport_fov;
    return c;
  }
};

enum class PolicyKind { Greedy, Buffer, Learned };

struct SessionPolicy {
  PolicyKind kind = PolicyKind::Greedy;
  const PolicyNet* net = nullptr;
  bool stochastic = false;  // learned policy: sample actions, else take the per-row mode

  std::string name() const {
    switch (kind) {
      case PolicyKind::Greedy: return "greedy";
      case PolicyKind::Buffer: return "buffer";
      case PolicyKind::Learned: return "policy";
    }
    return "?";
  }
};

/// What the client knows about one session GoF before deciding, plus the
/// ground truth needed to score it afterwards.
struct GofView {
  int gof = 0;
  int content_gof = 0;
  Camera actual;
  Camera predicted;
  std::vector<TileQoEInputs> tiles;        // from the predicted viewport
  std::vector<double> actual_visibility;  // per tile, at playback
  std::vector<double> saliency;           // normalized tile scores
  double mean_displacement = 0.0;
  double max_displacement = 0.0;
};

/// Per-tile QoE inputs seen from `cam`: visibility, Phi, Psi and PSNR/SSIM from
/// rendering each visible tile alone at every level.
inline std::vector<TileQoEInputs> tile_inputs(const EncodedGof& gof, const Camera& cam, const QoEConfig& qc) {
  std::vector<TileQoEInputs> out;
  std::vector<double> dist;
  double d_max = 0.0;
  for (std::size_t k = 0; k < gof.tiles.size(); ++k) {
    const auto& t = gof.tiles[k];
    auto in = TileQoEInputs::from_ladder(t.ladder);
    in.visibility = visibility(t.bbox, cam);
    in.visible = in.visibility > 0.0;
    in.saliency = gof.saliency_norm[k];
    in.phi = phi(in.saliency, in.visibility, qc.gamma_sal);
    dist.push_back((centroid(t, gof.keyframe) - cam.position).norm());
    if (in.visible) d_max = std::max(d_max, dist.back());
    out.push_back(in);
  }
  if (!(d_max > 0.0)) d_max = 1.0;
  for (std::size_t k = 0; k < gof.tiles.size(); ++k) {
    std::vector<double> alpha;
    for (auto id : gof.tiles[k].primitive_ids) alpha.push_back(gof.keyframe[id].opacity);
    out[k].psi = psi(alpha, std::min(dist[k], d_max), d_max, qc.beta_att);
    if (!out[k].visible) continue;
    const auto s = score_tile(gof.tiles[k], gof.keyframe, cam);
    out[k].psnr = s.psnr;
    out[k].ssim = s.ssim;
  }
  return out;
}

/// Views for a session: GoF t plays content GoF t mod n; the actual pose is the
/// FoV trace at mid-GoF playback time, the predicted pose adds Gaussian pitch/yaw noise.
inline std::vector<GofView> build_views(const EncodedContent& content, const FovTrace& fov, const SessionConfig& cfg) {
  cfg.validate();
  require(!content.gofs.empty(), "session: content has no GoFs");
  fov.validate();
  Rng rng(derive_seed(cfg.seed, 0x766965ULL));
  std::vector<GofView> views;
  for (int t = 0; t < cfg.gofs; ++t) {
    GofView v;
    v.gof = t;
    v.content_gof = t % static_cast<int>(content.gofs.size());
    const auto& g = content.gofs[static_cast<std::size_t>(v.content_gof)];
    v.actual = fov.camera_at((t + 0.5) * cfg.qoe.gof_seconds, cfg.intrinsics());
    v.predicted = v.actual;
    if (cfg.fov_noise_rad > 0.0) {
      v.predicted.pitch += cfg.fov_noise_rad * rng.normal();
      v.predicted.yaw += cfg.fov_noise_rad * rng.normal();
    }
    v.tiles = tile_inputs(g, v.predicted, cfg.qoe);
    for (const auto& tile : g.tiles) v.actual_visibility.push_back(visibility(tile.bbox, v.actual));
    v.saliency = g.saliency_norm;
    v.mean_displacement = g.mean_displacement;
    v.max_displacement = g.max_displacement;
    views.push_back(std::move(v));
  }
  return views;
}

struct GofLogRow {
  int gof = 0;
  int content_gof = 0;
  double request_s = 0.0;
  double mbps = 0.0;
  double budget_bytes = 0.0;
  double bytes = 0.0;
  double bytes_visible = 0.0;  // transmitted bytes of tiles visible at playback
  int visible_tiles = 0;
  int transmitted_tiles = 0;
  int encoded_tiles = 0;
  double mean_level = 0.0;  // over transmitted tiles, 0 when none
  double q_geo = 0.0;
  double q_render = 0.0;
  double ssim_fov = std::numeric_limits<double>::quiet_NaN();
  double t_e = 0.0, t_r = 0.0, t_d = 0.0, t_u = 0.0;
  double stall_s = 0.0;
  int stall_event = 0;
  bool starved = false;
  double buffer_s = 0.0;  // after this GoF
  double qoe = 0.0;
  double smoothness = 0.0;
  double reward = 0.0;
};

struct SessionSummary {
  std::string policy;
  int gofs = 0;
  double mean_qoe = 0.0;
  double total_stall_s = 0.0;
  int stall_count = 0;
  double mean_smoothness = 0.0;
  double fov_match_rate = 1.0;
  double mean_reward = 0.0;
  double total_bytes = 0.0;
  double playback_s = 0.0;
  double wall_clock_s = 0.0;
};

struct SessionResult {
  std::vector<GofLogRow> rows;
  SessionSummary summary;
  Episode episode;  // learner view, filled for learned policies
};

/// Byte-weighted share of transmitted bytes whose tile was visible at playback;
/// 1 when nothing was transmitted.
inline double fov_match_rate(std::span<const GofLogRow> rows) {
  double total = 0.0, hit = 0.0;
  for (const auto& r : rows) {
    total += r.bytes;
    hit += r.bytes_visible;
  }
  return total > 0.0 ? hit / total : 1.0;
}

inline SessionSummary summarize(std::span<const GofLogRow> rows, const std::string& policy, double gof_seconds) {
  SessionSummary s;
  s.policy = policy;
  s.gofs = static_cast<int>(rows.size());
  for (const auto& r : rows) {
    s.mean_qoe += r.qoe;
    s.total_stall_s += r.stall_s;
    s.stall_count += r.stall_event;
    s.mean_smoothness += r.smoothness;
    s.mean_reward += r.reward;
    s.total_bytes += r.bytes;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    s.mean_qoe /= n;
    s.mean_smoothness /= n;
    s.mean_reward /= n;
  }
  s.fov_match_rate = fov_match_rate(rows);
  s.playback_s = gof_seconds * static_cast<double>(rows.size());
  s.wall_clock_s = rows.empty() ? 0.0 : rows.back().request_s + gof_seconds + rows.back().stall_s;
  return s;
}

/// Viewport image from the actual camera of the transmitted tiles as delivered,
/// and the full ground-truth reference at the probe frame.
inline double viewport_ssim(const EncodedGof& gof, const Decision& d, const Camera& cam) {
  Scene shown;
  for (std::size_t k = 0; k < d.tiles.size(); ++k) {
    const auto& a = d.tiles[k];
    if (!a.transmit) continue;
    const auto part = delivered_tile(gof, k, a.level, a.encoded);
    shown.insert(shown.end(), part.begin(), part.end());
  }
  return ssim(render(shown, cam), render(gof.probe, cam));
}

namespace detail {

inline Decision decide(const SessionPolicy& pol, const GofProblem& p, const SessionState& state, Rng& rng,
                       StepRecord* step, QoEWeights* learner_weights) {
  switch (pol.kind) {
    case PolicyKind::Greedy: return greedy_baseline(p).decision;
    case PolicyKind::Buffer: return buffer_baseline(p);
    case PolicyKind::Learned: break;
  }
  require(pol.net != nullptr, "learned policy selected without a network");
  const auto obs = observe(state, p);
  const auto out = policy_forward(*pol.net, obs);
  if (learner_weights) *learner_weights = out.weights;
  if (pol.stochastic) {
    auto pd = sample_action(out, obs, p, rng);
    if (step) {
      step->rows = obs.rows;
      step->task = obs.task;
      step->mode = pd.actions.mode;
      step->level = pd.actions.level;
    }
    return pd.decision;
  }
  Decision d = empty_decision(p.tiles.size());
  for (std::size_t r = 0; r < obs.tile_index.size(); ++r) {
    Eigen::Index m = 0, l = 0;
    out.mode_probs.row(static_cast<Eigen::Index>(r)).maxCoeff(&m);
    out.level_probs.row(static_cast<Eigen::Index>(r)).maxCoeff(&l);
    d.tiles[obs.tile_index[r]] = TileAction{true, m == 1, static_cast<int>(l)};
  }
  return project_feasible(p, d);
}

}  // namespace detail

/// One deterministic session. Bandwidth is the trace value held at each GoF's
/// request time (`time_offset_s` shifts into the trace). The clock advances one
/// GoF interval plus that GoF's stall per step. `content` may be null when
/// viewport rendering is off.
inline SessionResult run_session(const EncodedContent* content, std::span<const GofView> views,
                                 const BandwidthTrace& bw, const SessionPolicy& pol, const SessionConfig& cfg,
                                 double time_offset_s = 0.0) {
  cfg.validate();
  bw.validate();
  require(!cfg.render_viewport || content != nullptr, "session: viewport rendering needs the encoded content");
  const QoEConfig& qc = cfg.qoe;
  Rng rng(derive_seed(cfg.seed, 0x706f6cULL));
  SessionResult res;
  SessionHistory hist;
  double clock = 0.0;
  std::optional<std::pair<double, double>> prev_q;
  double episode_qoe = 0.0;

  for (const auto& v : views) {
    GofLogRow row;
    row.gof = v.gof;
    row.content_gof = v.content_gof;
    row.request_s = clock;
    row.mbps = bw.mbps_at(time_offset_s + clock);

    GofProblem p;
    p.tiles = v.tiles;
    p.bytes_per_s = mbps_to_bytes_per_s(row.mbps);
    p.buffer_s = hist.buffer_s;
    p.cfg = qc;
    row.budget_bytes = p.budget_bytes();

    hist.poses.push_back(v.predicted);
    hist.mean_displacement = v.mean_displacement;
    hist.max_displacement = v.max_displacement;
    const auto state = build_state(hist, v.saliency, qc.buffer_max_s);

    StepRecord step;
    QoEWeights learner_w = qc.weights;
    const Decision d = detail::decide(pol, p, state, rng, &step, &learner_w);
    const auto fz = feasible(p, d);
    if (!fz.ok)
      throw std::logic_error("session: policy '" + pol.name() + "' produced an infeasible decision at GoF " +
                             std::to_string(v.gof) + " (slack " + std::to_string(fz.slack) + " bytes)");

    double ssim_fov = std::numeric_limits<double>::quiet_NaN();
    bool any_sent = false;
    for (const auto& a : d.tiles) any_sent = any_sent || a.transmit;
    if (cfg.render_viewport && any_sent) {
      const auto& g = content->gofs.at(static_cast<std::size_t>(v.content_gof));
      ssim_fov = viewport_ssim(g, d, v.actual);
    }
    auto o = evaluate_gof(p, d, qc.weights, ssim_fov);

    int visible = 0;
    for (const auto& t : p.tiles) visible += t.visible ? 1 : 0;
    row.starved = visible > 0 && (!any_sent || !std::isfinite(o.ready_s));
    if (row.starved) {
      // nothing playable arrives: charge the timeout and empty the buffer
      o.stall = StallResult{cfg.stall_timeout_s, 1, 0.0};
      o.qoe = qoe(o.q_geo, o.q_render, o.stall.duration, o.stall.event, qc.weights, qc.alpha_mix);
    }

    row.visible_tiles = visible;
    double levels = 0.0;
    for (std::size_t k = 0; k < d.tiles.size(); ++k) {
      const auto& a = d.tiles[k];
      if (!a.transmit) continue;
      ++row.transmitted_tiles;
      row.encoded_tiles += a.encoded ? 1 : 0;
      levels += a.level;
      const double b = action_bytes(a, p.tiles[k]);
      if (v.actual_visibility.at(k) > 0.0) row.bytes_visible += b;
    }
    row.mean_level = row.transmitted_tiles ? levels / row.transmitted_tiles : 0.0;
    row.bytes = o.bytes;
    row.q_geo = o.q_geo;
    row.q_render = o.q_render;
    row.ssim_fov = ssim_fov;
    row.t_e = o.transmit.encoded;
    row.t_r = o.transmit.reconstructed;
    row.t_d = o.decode_s;
    row.t_u = o.ready_s;
    row.stall_s = o.stall.duration;
    row.stall_event = o.stall.event;
    row.buffer_s = o.stall.buffer;
    row.qoe = o.qoe;
    row.smoothness =
        prev_q ? smoothness_penalty(prev_q->first, o.q_geo, prev_q->second, o.q_render, qc.delta_smooth) : 0.0;
    row.reward = reward(o.qoe, row.smoothness, qc.weights);

    if (pol.kind == PolicyKind::Learned && pol.stochastic) {
      // learning signal from the weight head; the logged QoE keeps config weights
      const double q = qoe(o.q_geo, o.q_render, o.stall.duration, o.stall.event, learner_w, qc.alpha_mix);
      step.reward = reward(q, row.smoothness, learner_w);
      res.episode.steps.push_back(std::move(step));
    }
    prev_q = {o.q_geo, o.q_render};
    episode_qoe += o.qoe;
    res.episode.stalls += o.stall.event;

    hist.bandwidth_mbps.push_back(row.mbps);
    hist.buffer_s = o.stall.buffer;
    hist.decode_primitives = 0.0;
    for (std::size_t k = 0; k < d.tiles.size(); ++k) {
      const auto& a = d.tiles[k];
      if (a.transmit && a.encoded && p.tiles[k].visible)
        hist.decode_primitives += p.tiles[k].primitives[static_cast<std::size_t>(a.level)];
    }
    clock += qc.gof_seconds + o.stall.duration;
    res.rows.push_back(row);
  }
  res.episode.mean_qoe = views.empty() ? 0.0 : episode_qoe / static_cast<double>(views.size());
  res.summary = summarize(res.rows, pol.name(), qc.gof_seconds);
  return res;
}

/// Learner task: rollouts replay `views` under a randomly chosen trace and start
/// offset, sampling from the policy. Viewport rendering is skipped.
inline Rollout make_rollout(std::shared_ptr<const std::vector<GofView>> views,
                            std::shared_ptr<const std::vector<BandwidthTrace>> traces, SessionConfig cfg) {
  require(views && !views->empty() && traces && !traces->empty(), "rollout: need views and traces");
  cfg.render_viewport = false;
  return [views, traces, cfg](const PolicyNet& net, std::uint64_t seed) {
    Rng rng(seed);
    const auto& trace = (*traces)[rng.index(traces->size())];
    const double span = trace.samples.back().first - trace.samples.front().first;
    const double horizon = cfg.gofs * cfg.qoe.gof_seconds;
    const double offset = trace.samples.front().first + (span > horizon ? rng.uniform(0.0, span - horizon) : 0.0);
    SessionConfig c = cfg;
    c.seed = rng.next();
    const SessionPolicy pol{PolicyKind::Learned, &net, true};
    const std::size_t n = std::min(views->size(), static_cast<std::size_t>(cfg.gofs));
    return run_session(nullptr, std::span(views->data(), n), trace, pol, c, offset).episode;
  };
}

}  // namespace gsstream
