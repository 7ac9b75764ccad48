#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Geometry>

#include "gsstream/errors.hpp"
#include "gsstream/primitive.hpp"

namespace gsstream {

/// Pinhole camera. Camera frame: +x right, +y down, +z forward. World orientation
/// is R = Ry(yaw) * Rx(pitch) * Rz(roll), so a zero pose looks along world +Z.
struct Camera {
  Vec3 position = Vec3::Zero();
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;
  double fov_x = std::numbers::pi / 3;
  double fov_y = std::numbers::pi / 3;
  int width = 256;
  int height = 256;

  void validate() const {
    require(fov_x > 0 && fov_x < std::numbers::pi && fov_y > 0 && fov_y < std::numbers::pi,
            "camera field of view must lie in (0, pi)");
    require(width >= 16 && height >= 16, "camera image must be at least 16x16");
    require(position.allFinite() && std::isfinite(pitch) && std::isfinite(yaw) && std::isfinite(roll),
            "camera pose must be finite");
  }

  Mat3 rotation() const {
    return (Eigen::AngleAxisd(yaw, Vec3::UnitY()) * Eigen::AngleAxisd(pitch, Vec3::UnitX()) *
            Eigen::AngleAxisd(roll, Vec3::UnitZ()))
        .toRotationMatrix();
  }

  Vec3 forward() const { return rotation() * Vec3::UnitZ(); }
  double fx() const { return 0.5 * width / std::tan(0.5 * fov_x); }
  double fy() const { return 0.5 * height / std::tan(0.5 * fov_y); }

  /// Camera at `eye` with zero roll whose forward axis points at `target`.
  static Camera look_at(const Vec3& eye, const Vec3& target, int width = 256, int height = 256,
                        double fov = std::numbers::pi / 3) {
    Camera c;
    c.position = eye;
    c.width = width;
    c.height = height;
    c.fov_x = c.fov_y = fov;
    const Vec3 d = (target - eye).normalized();
    c.pitch = std::asin(std::clamp(-d.y(), -1.0, 1.0));
    c.yaw = std::atan2(d.x(), d.z());
    return c;
  }
};

inline constexpr double kNearPlane = 1e-2;

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // row-major RGB

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double gray(int x, int y) const { return 0.299 * at(x, y, 0) + 0.587 * at(x, y, 1) + 0.114 * at(x, y, 2); }
};

inline constexpr double kSh0 = 0.28209479177387814;

inline Vec3 primitive_color(const GaussianPrimitive& g) {
  return (Vec3::Constant(0.5) + kSh0 * g.sh0).cwiseMax(0.0).cwiseMin(1.0);
}

struct RenderStats {
  int drawn = 0;
  int culled = 0;
  int degenerate = 0;
};

struct Splat {
  double depth;
  Vec3 world;
  std::size_t id;
  double u, v;
  double ia, ib, ic;  // inverse 2D covariance [[ia, ib], [ib, ic]]
  int x0, x1, y0, y1;
  double opacity;
  Vec3 color;
};

/// Screen-space footprint of one primitive, or false when culled or degenerate.
inline bool project_splat(const GaussianPrimitive& g, std::size_t id, const Camera& cam, const Mat3& world_to_cam,
                          Splat& out, RenderStats& stats) {
  const Vec3 pc = world_to_cam * (g.position - cam.position);
  if (!(pc.z() > kNearPlane)) {
    ++stats.culled;
    return false;
  }
  const double fx = cam.fx(), fy = cam.fy(), z = pc.z();
  Eigen::Matrix<double, 2, 3> J;
  J << fx / z, 0.0, -fx * pc.x() / (z * z), 0.0, fy / z, -fy * pc.y() / (z * z);
  const Mat3 cov_cam = world_to_cam * covariance(g) * world_to_cam.transpose();
  Eigen::Matrix2d cov2 = J * cov_cam * J.transpose();
  cov2(0, 0) += 0.3;
  cov2(1, 1) += 0.3;
  const double det = cov2.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) {
    ++stats.degenerate;
    return false;
  }
  out.depth = z;
  out.world = g.position;
  out.id = id;
  out.u = fx * pc.x() / z + 0.5 * cam.width;
  out.v = fy * pc.y() / z + 0.5 * cam.height;
  out.ia = cov2(1, 1) / det;
  out.ib = -cov2(0, 1) / det;
  out.ic = cov2(0, 0) / det;
  const double mid = 0.5 * (cov2(0, 0) + cov2(1, 1));
  const double lambda = mid + std::sqrt(std::max(0.0, mid * mid - det));
  const double r = 3.0 * std::sqrt(lambda);
  out.x0 = static_cast<int>(std::max(0.0, std::floor(out.u - r)));
  out.x1 = static_cast<int>(std::min(cam.width - 1.0, std::ceil(out.u + r)));
  out.y0 = static_cast<int>(std::max(0.0, std::floor(out.v - r)));
  out.y1 = static_cast<int>(std::min(cam.height - 1.0, std::ceil(out.v + r)));
  if (out.x0 > out.x1 || out.y0 > out.y1 || !std::isfinite(out.u) || !std::isfinite(out.v)) {
    ++stats.culled;
    return false;
  }
  out.opacity = g.opacity;
  out.color = primitive_color(g);
  return true;
}

/// Front-to-back alpha compositing of the listed primitives over a black background.
inline Image render(const Scene& scene, std::span<const std::size_t> ids, const Camera& cam,
                    RenderStats* stats_out = nullptr) {
  cam.validate();
  RenderStats stats;
  const Mat3 world_to_cam = cam.rotation().transpose();
  std::vector<Splat> splats;
  splats.reserve(ids.size());
  for (auto id : ids) {
    const auto& g = scene.at(id);
    require(is_finite(g), "render: non-finite primitive " + std::to_string(id));
    Splat s;
    if (project_splat(g, id, cam, world_to_cam, s, stats)) splats.push_back(s);
  }
  // Depth order with a content tie-break so the result does not depend on input order.
  std::sort(splats.begin(), splats.end(), [&](const Splat& a, const Splat& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    const auto ka = std::make_tuple(a.world.x(), a.world.y(), a.world.z(), a.opacity, a.color.x(), a.color.y(),
                                    a.color.z(), a.ia, a.ib, a.ic);
    const auto kb = std::make_tuple(b.world.x(), b.world.y(), b.world.z(), b.opacity, b.color.x(), b.color.y(),
                                    b.color.z(), b.ia, b.ib, b.ic);
    return ka < kb;
  });
  Image img(cam.width, cam.height);
  std::vector<double> transmittance(static_cast<std::size_t>(cam.width) * cam.height, 1.0);
  for (const auto& s : splats) {
    for (int y = s.y0; y <= s.y1; ++y) {
      const double dy = y + 0.5 - s.v;
      for (int x = s.x0; x <= s.x1; ++x) {
        const double dx = x + 0.5 - s.u;
        const double power = -0.5 * (s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy);
        if (power > 0.0) continue;
        const double alpha = std::min(0.99, s.opacity * std::exp(power));
        double& t = transmittance[static_cast<std::size_t>(y) * cam.width + x];
        const double w = alpha * t;
        for (int c = 0; c < 3; ++c) img.at(x, y, c) += w * s.color[c];
        t *= 1.0 - alpha;
      }
    }
    ++stats.drawn;
  }
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
  if (stats_out) *stats_out = stats;
  return img;
}

inline Image render(const Scene& scene, const Camera& cam, RenderStats* stats = nullptr) {
  std::vector<std::size_t> ids(scene.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return render(scene, ids, cam, stats);
}

inline constexpr double kPsnrCap = 100.0;

inline double psnr(const Image& a, const Image& b) {
  require(a.width == b.width && a.height == b.height, "psnr: image dimensions differ");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline double ssim_from_moments(double mx, double my, double vx, double vy, double cxy) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace detail

/// Grayscale SSIM, 11x11 Gaussian window (sigma 1.5) over valid positions;
/// images smaller than the window use one global window.
inline double ssim(const Image& a, const Image& b) {
  require(a.width == b.width && a.height == b.height, "ssim: image dimensions differ");
  const int w = a.width, h = a.height;
  std::vector<double> ga(static_cast<std::size_t>(w) * h), gb(ga.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      ga[static_cast<std::size_t>(y) * w + x] = a.gray(x, y);
      gb[static_cast<std::size_t>(y) * w + x] = b.gray(x, y);
    }
  if (ga == gb) return 1.0;
  constexpr int kWin = 11;
  if (w < kWin || h < kWin) {
    const double n = static_cast<double>(ga.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < ga.size(); ++i) mx += ga[i], my += gb[i];
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      vx += (ga[i] - mx) * (ga[i] - mx);
      vy += (gb[i] - my) * (gb[i] - my);
      cxy += (ga[i] - mx) * (gb[i] - my);
    }
    return detail::ssim_from_moments(mx, my, vx / n, vy / n, cxy / n);
  }
  std::array<double, kWin> k{};
  double ks = 0.0;
  for (int i = 0; i < kWin; ++i) ks += (k[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5)));
  for (double& v : k) v /= ks;
  double total = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + kWin <= h; ++y0)
    for (int x0 = 0; x0 + kWin <= w; ++x0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int dy = 0; dy < kWin; ++dy)
        for (int dx = 0; dx < kWin; ++dx) {
          const double wt = k[dy] * k[dx];
          const std::size_t i = static_cast<std::size_t>(y0 + dy) * w + x0 + dx;
          mx += wt * ga[i];
          my += wt * gb[i];
          sxx += wt * ga[i] * ga[i];
          syy += wt * gb[i] * gb[i];
          sxy += wt * ga[i] * gb[i];
        }
      total += detail::ssim_from_moments(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my);
      ++count;
    }
  return total / count;
}

/// Fraction of the projected bounding rectangle of `box` that lands inside the image.
/// The part of the box behind the near plane is clipped away first.
inline double visibility(const Box& box, const Camera& cam) {
  cam.validate();
  if (box.empty()) return 0.0;
  const Mat3 world_to_cam = cam.rotation().transpose();
  std::array<Vec3, 8> corners;
  for (int i = 0; i < 8; ++i) {
    const Vec3 p((i & 1) ? box.hi.x() : box.lo.x(), (i & 2) ? box.hi.y() : box.lo.y(),
                 (i & 4) ? box.hi.z() : box.lo.z());
    corners[static_cast<std::size_t>(i)] = world_to_cam * (p - cam.position);
  }
  std::vector<Vec3> front;
  for (const auto& c : corners)
    if (c.z() >= kNearPlane) front.push_back(c);
  if (front.empty()) return 0.0;
  for (int i = 0; i < 8; ++i)
    for (int bit = 1; bit < 8; bit <<= 1) {
      const int j = i | bit;
      if (j == i) continue;
      const Vec3& a = corners[static_cast<std::size_t>(i)];
      const Vec3& b = corners[static_cast<std::size_t>(j)];
      if ((a.z() < kNearPlane) != (b.z() < kNearPlane)) {
        const double t = (kNearPlane - a.z()) / (b.z() - a.z());
        front.push_back(a + t * (b - a));
      }
    }
  double u0 = std::numeric_limits<double>::infinity(), u1 = -u0, v0 = u0, v1 = -u0;
  for (const auto& c : front) {
    const double u = cam.fx() * c.x() / c.z() + 0.5 * cam.width;
    const double v = cam.fy() * c.y() / c.z() + 0.5 * cam.height;
    u0 = std::min(u0, u), u1 = std::max(u1, u), v0 = std::min(v0, v), v1 = std::max(v1, v);
  }
  const double area = (u1 - u0) * (v1 - v0);
  const double cu0 = std::max(u0, 0.0), cu1 = std::min(u1, static_cast<double>(cam.width));
  const double cv0 = std::max(v0, 0.0), cv1 = std::min(v1, static_cast<double>(cam.height));
  if (!(area > 0.0)) {
    const bool inside = u0 >= 0 && u1 <= cam.width && v0 >= 0 && v1 <= cam.height;
    return inside ? 1.0 : 0.0;
  }
  const double clipped = std::max(0.0, cu1 - cu0) * std::max(0.0, cv1 - cv0);
  return std::clamp(clipped / area, 0.0, 1.0);
}

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write image: " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.data) out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
}

}  // namespace gsstream
