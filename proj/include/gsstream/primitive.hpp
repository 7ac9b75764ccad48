#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/geometry.hpp"

namespace gsstream {

/// One anisotropic 3D Gaussian. `scale` holds per-axis standard deviations,
/// `sh0` the zero-order spherical-harmonic color coefficients (R, G, B).
struct GaussianPrimitive {
  Vec3 position = Vec3::Zero();
  Quat rotation;
  Vec3 scale = Vec3::Ones();
  double opacity = 1.0;
  Vec3 sh0 = Vec3::Zero();
};

using Scene = std::vector<GaussianPrimitive>;

inline bool is_finite(const GaussianPrimitive& g) {
  return g.position.allFinite() && g.rotation.finite() && g.scale.allFinite() &&
         std::isfinite(g.opacity) && g.sh0.allFinite();
}

/// Throws ValidationError unless the primitive invariants hold.
inline void validate(const GaussianPrimitive& g) {
  require(is_finite(g), "primitive has non-finite fields");
  require(std::abs(g.rotation.norm() - 1.0) <= 1e-6, "primitive rotation is not a unit quaternion");
  require((g.scale.array() > 0.0).all(), "primitive scale must be strictly positive");
  require(g.opacity >= 0.0 && g.opacity <= 1.0, "primitive opacity outside [0, 1]");
}

/// Sigma = R diag(s^2) R^T.
inline Mat3 covariance(const GaussianPrimitive& g) {
  validate(g);
  const Mat3 r = rotation_matrix(g.rotation);
  const Vec3 s2 = g.scale.cwiseProduct(g.scale);
  return r * s2.asDiagonal() * r.transpose();
}

/// Rendering weight: opacity times sqrt(det(Sigma)), the effective volume proxy.
inline double render_weight(const GaussianPrimitive& g) {
  const double det = covariance(g).determinant();
  return g.opacity * std::sqrt(std::max(0.0, det));
}

/// ITU-R BT.601 luma of the order-0 color coefficients.
inline double grayscale(const GaussianPrimitive& g) {
  return 0.299 * g.sh0.x() + 0.587 * g.sh0.y() + 0.114 * g.sh0.z();
}

inline Box bounding_box(const Scene& scene) {
  Box b;
  for (const auto& g : scene) b.extend(g.position);
  return b;
}

// Scene files: one record per primitive, fields
// px py pz qw qx qy qz sx sy sz opacity c0r c0g c0b,
// either as little-endian float32 (binary) or whitespace/comma separated text.

inline constexpr std::size_t kSceneFieldsPerRecord = 14;

namespace detail {

inline std::array<double, kSceneFieldsPerRecord> to_record(const GaussianPrimitive& g) {
  return {g.position.x(), g.position.y(), g.position.z(), g.rotation.w, g.rotation.x,
          g.rotation.y,   g.rotation.z,   g.scale.x(),    g.scale.y(),  g.scale.z(),
          g.opacity,      g.sh0.x(),      g.sh0.y(),      g.sh0.z()};
}

inline GaussianPrimitive from_record(const std::array<double, kSceneFieldsPerRecord>& r) {
  GaussianPrimitive g;
  g.position = {r[0], r[1], r[2]};
  g.rotation = {r[3], r[4], r[5], r[6]};
  g.scale = {r[7], r[8], r[9]};
  g.opacity = r[10];
  g.sh0 = {r[11], r[12], r[13]};
  return g;
}

inline void put_f32_le(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff),
                         static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

inline float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline bool is_text_path(const std::string& path) {
  auto ends_with = [&](const std::string& suffix) {
    return path.size() >= suffix.size() &&
           path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".txt") || ends_with(".csv");
}

}  // namespace detail

inline void write_scene_binary(const Scene& scene, std::ostream& out) {
  for (const auto& g : scene)
    for (double v : detail::to_record(g)) detail::put_f32_le(out, static_cast<float>(v));
}

inline Scene read_scene_binary(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t record_bytes = kSceneFieldsPerRecord * 4;
  require(bytes.size() % record_bytes == 0, "scene file size is not a multiple of the record size");
  Scene scene;
  scene.reserve(bytes.size() / record_bytes);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t off = 0; off < bytes.size(); off += record_bytes) {
    std::array<double, kSceneFieldsPerRecord> r{};
    for (std::size_t f = 0; f < kSceneFieldsPerRecord; ++f) r[f] = detail::get_f32_le(p + off + 4 * f);
    scene.push_back(detail::from_record(r));
  }
  return scene;
}

inline void write_scene_text(const Scene& scene, std::ostream& out) {
  out.precision(17);
  for (const auto& g : scene) {
    const auto r = detail::to_record(g);
    for (std::size_t f = 0; f < r.size(); ++f) out << (f ? " " : "") << r[f];
    out << '\n';
  }
}

inline Scene read_scene_text(std::istream& in) {
  Scene scene;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream ls(line);
    std::array<double, kSceneFieldsPerRecord> r{};
    for (auto& v : r)
      if (!(ls >> v)) throw ValidationError("scene row " + std::to_string(row) + ": expected 14 fields");
    scene.push_back(detail::from_record(r));
  }
  return scene;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open scene file: " + path);
  return detail::is_text_path(path) ? read_scene_text(in) : read_scene_binary(in);
}

inline void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write scene file: " + path);
  if (detail::is_text_path(path))
    write_scene_text(scene, out);
  else
    write_scene_binary(scene, out);
}

}  // namespace gsstream
