#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/geometry.hpp"
#include "gsstream/primitive.hpp"
#include "gsstream/rng.hpp"

namespace gsstream {

enum class MotionKind { Static, Drift, Orbit };

inline const char* to_string(MotionKind k) {
  switch (k) {
    case MotionKind::Static: return "static";
    case MotionKind::Drift: return "drift";
    case MotionKind::Orbit: return "orbit";
  }
  return "?";
}

inline MotionKind motion_kind_from_string(const std::string& s) {
  if (s == "static") return MotionKind::Static;
  if (s == "drift") return MotionKind::Drift;
  if (s == "orbit") return MotionKind::Orbit;
  throw ValidationError("unknown motion kind: " + s);
}

/// Rigid per-frame motion of one blob.
struct MotionScript {
  MotionKind kind = MotionKind::Static;
  Vec3 velocity = Vec3::Zero();  // drift, scene units per frame
  Vec3 pivot = Vec3::Zero();     // orbit center
  Vec3 axis = Vec3::UnitY();     // orbit axis
  double angular_speed = 0.0;    // orbit, radians per frame
};

struct BlobSpec {
  Vec3 center = Vec3::Zero();
  double spread = 0.2;  // std of member positions
  int count = 100;
  Vec3 color = Vec3::Constant(0.5);  // RGB in [0, 1]
  double color_jitter = 0.05;
  double opacity = 0.8;
  double scale = 0.03;
  MotionScript motion;
};

struct SceneSpec {
  std::vector<BlobSpec> blobs;
  int frames = 30;

  void validate() const {
    require(frames >= 1, "scene spec: at least one frame required");
    require(!blobs.empty(), "scene spec: no blobs");
    for (const auto& b : blobs) {
      require(b.count >= 1, "scene spec: blob needs at least one primitive");
      require(b.spread >= 0.0 && b.scale > 0.0, "scene spec: bad blob extent");
      require(b.opacity >= 0.0 && b.opacity <= 1.0, "scene spec: opacity must lie in [0, 1]");
      require(b.motion.kind != MotionKind::Orbit || b.motion.axis.norm() > 0.0, "scene spec: orbit axis is zero");
    }
  }
};

/// Rigid transform of frame f: rotation about the orbit pivot or translation.
inline GaussianPrimitive move_primitive(const GaussianPrimitive& g, const MotionScript& m, int frame) {
  GaussianPrimitive out = g;
  const double f = static_cast<double>(frame);
  switch (m.kind) {
    case MotionKind::Static: break;
    case MotionKind::Drift: out.position = g.position + m.velocity * f; break;
    case MotionKind::Orbit: {
      const Quat q = Quat::from_axis_angle(m.axis.normalized(), m.angular_speed * f);
      out.position = m.pivot + rotate(q, g.position - m.pivot);
      out.rotation = normalized(multiply(q, g.rotation));
      break;
    }
  }
  return out;
}

/// Frame sequence of Gaussian blobs. Primitive i is the same primitive in every frame.
inline std::vector<Scene> synth_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Scene key;
  std::vector<std::size_t> owner;
  for (std::size_t b = 0; b < spec.blobs.size(); ++b) {
    const auto& blob = spec.blobs[b];
    for (int i = 0; i < blob.count; ++i) {
      GaussianPrimitive g;
      g.position = blob.center + Vec3(rng.normal(), rng.normal(), rng.normal()) * blob.spread;
      g.rotation = normalized(Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()});
      g.scale = Vec3::Constant(blob.scale * rng.uniform(0.7, 1.3));
      g.opacity = blob.opacity;
      Vec3 rgb;
      for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(blob.color[c] + blob.color_jitter * rng.normal(), 0.0, 1.0);
      g.sh0 = (rgb - Vec3::Constant(0.5)) / 0.28209479177387814;
      key.push_back(g);
      owner.push_back(b);
    }
  }
  std::vector<Scene> frames;
  for (int f = 0; f < spec.frames; ++f) {
    Scene s(key.size());
    for (std::size_t i = 0; i < key.size(); ++i) s[i] = move_primitive(key[i], spec.blobs[owner[i]].motion, f);
    frames.push_back(std::move(s));
  }
  return frames;
}

/// Demo content: a static backdrop, a drifting blob, an orbiting blob and two
/// static props, inside roughly [-1.5, 1.5]^3.
inline SceneSpec default_scene_spec(int frames = 30, int scale_count = 1) {
  SceneSpec s;
  s.frames = frames;
  auto blob = [&](Vec3 c, double spread, int n, Vec3 color) {
    BlobSpec b;
    b.center = c;
    b.spread = spread;
    b.count = n * scale_count;
    b.color = color;
    return b;
  };
  s.blobs.push_back(blob({0.0, -1.0, 0.0}, 0.35, 160, {0.45, 0.45, 0.45}));
  auto drift = blob({-0.9, 0.1, 0.3}, 0.2, 90, {0.9, 0.2, 0.15});
  drift.motion.kind = MotionKind::Drift;
  drift.motion.velocity = {0.2 / 30.0, 0.0, 0.0};
  s.blobs.push_back(drift);
  auto orbit = blob({0.8, 0.3, 0.0}, 0.15, 80, {0.15, 0.3, 0.9});
  orbit.motion.kind = MotionKind::Orbit;
  orbit.motion.pivot = {0.0, 0.3, 0.0};
  orbit.motion.axis = Vec3::UnitY();
  orbit.motion.angular_speed = 0.3 / 30.0;
  s.blobs.push_back(orbit);
  s.blobs.push_back(blob({0.6, -0.5, -0.9}, 0.15, 60, {0.2, 0.8, 0.3}));
  s.blobs.push_back(blob({-0.6, 0.6, -0.8}, 0.12, 50, {0.95, 0.9, 0.6}));
  return s;
}

/// Eight blobs of 25 primitives, one per octant cell of [-1, 1]^3, with
/// distinct gray levels and motion magnitudes. Two frames (previous and current).
inline SceneSpec saliency_toy_spec() {
  SceneSpec s;
  s.frames = 2;
  const double gray[8] = {0.50, 0.62, 0.35, 0.80, 0.45, 0.20, 0.70, 0.55};
  const double shift[8] = {0.00, 0.02, 0.00, 0.10, 0.25, 0.05, 0.15, 0.35};
  for (int k = 0; k < 8; ++k) {
    BlobSpec b;
    b.center = {(k & 1) ? 0.5 : -0.5, (k & 2) ? 0.5 : -0.5, (k & 4) ? 0.5 : -0.5};
    b.spread = 0.08;
    b.count = 25;
    b.color = Vec3::Constant(gray[k]);
    b.color_jitter = 0.02;
    b.motion.kind = shift[k] > 0.0 ? MotionKind::Drift : MotionKind::Static;
    b.motion.velocity = Vec3(0.0, 0.0, 1.0) * shift[k] * (k & 4 ? -1.0 : 1.0);
    s.blobs.push_back(b);
  }
  return s;
}

}  // namespace gsstream
