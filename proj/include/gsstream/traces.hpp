#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/renderer.hpp"
#include "gsstream/rng.hpp"

namespace gsstream {

enum class TraceCategory { Std4G, Ext4G, Std5G, Ext5G };

inline constexpr std::array<TraceCategory, 4> kTraceCategories{TraceCategory::Std4G, TraceCategory::Ext4G,
                                                              TraceCategory::Std5G, TraceCategory::Ext5G};

inline const char* to_string(TraceCategory c) {
  switch (c) {
    case TraceCategory::Std4G: return "Std4G";
    case TraceCategory::Ext4G: return "Ext4G";
    case TraceCategory::Std5G: return "Std5G";
    case TraceCategory::Ext5G: return "Ext5G";
  }
  return "?";
}

inline TraceCategory trace_category_from_string(const std::string& s) {
  for (auto c : kTraceCategories)
    if (s == to_string(c)) return c;
  throw ValidationError("unknown trace category: " + s + " (expected Std4G, Ext4G, Std5G or Ext5G)");
}

/// Throughput range of a category in Mbps.
inline std::pair<double, double> category_range(TraceCategory c) {
  switch (c) {
    case TraceCategory::Std4G: return {35.0, 90.0};
    case TraceCategory::Ext4G: return {0.0, 150.0};
    case TraceCategory::Std5G: return {150.0, 600.0};
    case TraceCategory::Ext5G: return {0.0, 1200.0};
  }
  return {0.0, 0.0};
}

inline bool is_extreme(TraceCategory c) { return c == TraceCategory::Ext4G || c == TraceCategory::Ext5G; }

namespace detail {

/// Zero-order hold over strictly increasing sample times; before the first
/// sample the first value holds.
template <class T>
const T& hold(const std::vector<std::pair<double, T>>& samples, double t) {
  require(!samples.empty(), "trace has no samples");
  auto it = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double v, const std::pair<double, T>& s) { return v < s.first; });
  if (it == samples.begin()) return it->second;
  return std::prev(it)->second;
}

inline std::vector<double> parse_row(const std::string& line, std::size_t fields, const std::string& path, int row) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cell = b == std::string::npos ? std::string() : cell.substr(b, e - b + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cell.size())
      throw ValidationError(path + ": row " + std::to_string(row) + ": not a number: '" + cell + "'");
    out.push_back(v);
  }
  if (out.size() != fields)
    throw ValidationError(path + ": row " + std::to_string(row) + ": expected " + std::to_string(fields) +
                          " fields, got " + std::to_string(out.size()));
  for (double v : out)
    if (!std::isfinite(v)) throw ValidationError(path + ": row " + std::to_string(row) + ": non-finite value");
  return out;
}

/// Data rows of a trace file with their 1-based line numbers; blank lines and
/// lines starting with '#' are skipped.
inline std::vector<std::pair<int, std::vector<double>>> read_rows(const std::string& path, std::size_t fields) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open trace file: " + path);
  std::vector<std::pair<int, std::vector<double>>> rows;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    rows.emplace_back(row, parse_row(line, fields, path, row));
  }
  if (rows.empty()) throw ValidationError(path + ": no samples");
  return rows;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

struct BandwidthTrace {
  std::vector<std::pair<double, double>> samples;  // (time_s, mbps)
  TraceCategory category = TraceCategory::Std4G;

  void validate() const {
    require(!samples.empty(), "bandwidth trace has no samples");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      require(samples[i].second >= 0.0, "bandwidth trace: negative bandwidth at sample " + std::to_string(i + 1));
      require(i == 0 || samples[i].first > samples[i - 1].first,
              "bandwidth trace: times not strictly increasing at sample " + std::to_string(i + 1));
    }
  }

  /// Mbps held from the latest sample at or before t.
  double mbps_at(double t) const { return detail::hold(samples, t); }
};

struct FovPose {
  Vec3 position = Vec3::Zero();
  double pitch = 0.0, yaw = 0.0, roll = 0.0;
};

struct FovTrace {
  std::vector<std::pair<double, FovPose>> samples;

  void validate() const {
    require(!samples.empty(), "FoV trace has no samples");
    for (std::size_t i = 1; i < samples.size(); ++i)
      require(samples[i].first > samples[i - 1].first,
              "FoV trace: times not strictly increasing at sample " + std::to_string(i + 1));
  }

  const FovPose& pose_at(double t) const { return detail::hold(samples, t); }

  /// Camera of the pose held at t with the given intrinsics.
  Camera camera_at(double t, const Camera& intrinsics) const {
    Camera c = intrinsics;
    const auto& p = pose_at(t);
    c.position = p.position;
    c.pitch = p.pitch;
    c.yaw = p.yaw;
    c.roll = p.roll;
    return c;
  }
};

/// Rows "time_s,mbps". Non-monotonic times, negative bandwidth and malformed
/// rows are rejected with their line number.
inline BandwidthTrace load_bandwidth(const std::string& path, TraceCategory category = TraceCategory::Std4G) {
  BandwidthTrace t;
  t.category = category;
  double last = -std::numeric_limits<double>::infinity();
  for (const auto& [row, v] : detail::read_rows(path, 2)) {
    if (v[0] <= last) throw ValidationError(path + ": row " + std::to_string(row) + ": time not strictly increasing");
    if (v[1] < 0.0) throw ValidationError(path + ": row " + std::to_string(row) + ": negative bandwidth");
    last = v[0];
    t.samples.emplace_back(v[0], v[1]);
  }
  return t;
}

/// Rows "time_s,x,y,z,pitch,yaw,roll" with angles in radians.
inline FovTrace load_fov(const std::string& path) {
  FovTrace t;
  double last = -std::numeric_limits<double>::infinity();
  for (const auto& [row, v] : detail::read_rows(path, 7)) {
    if (v[0] <= last) throw ValidationError(path + ": row " + std::to_string(row) + ": time not strictly increasing");
    last = v[0];
    t.samples.emplace_back(v[0], FovPose{{v[1], v[2], v[3]}, v[4], v[5], v[6]});
  }
  return t;
}

inline void write_bandwidth(const BandwidthTrace& t, std::ostream& out) {
  out << "# time_s,mbps category=" << to_string(t.category) << "\n";
  for (const auto& [time, mbps] : t.samples) out << detail::fmt(time) << "," << detail::fmt(mbps) << "\n";
}

inline void write_fov(const FovTrace& t, std::ostream& out) {
  out << "# time_s,x,y,z,pitch,yaw,roll\n";
  for (const auto& [time, p] : t.samples)
    out << detail::fmt(time) << "," << detail::fmt(p.position.x()) << "," << detail::fmt(p.position.y()) << ","
        << detail::fmt(p.position.z()) << "," << detail::fmt(p.pitch) << "," << detail::fmt(p.yaw) << ","
        << detail::fmt(p.roll) << "\n";
}

/// Bounded random walk over the category's range, one sample per `step_s`.
/// Extreme categories add dropout intervals at 0 Mbps.
inline BandwidthTrace synth_bandwidth(TraceCategory category, double duration_s, std::uint64_t seed,
                                      double step_s = 1.0) {
  require(duration_s > 0.0 && step_s > 0.0, "synth_bandwidth: duration and step must be positive");
  const auto [lo, hi] = category_range(category);
  const double span = hi - lo;
  Rng rng(seed);
  BandwidthTrace t;
  t.category = category;
  double x = lo + span * rng.uniform(0.25, 0.75);
  int dropout = 0;
  const int n = static_cast<int>(std::ceil(duration_s / step_s));
  for (int i = 0; i < n; ++i) {
    x += 0.12 * span * rng.normal();
    // reflect at the bounds
    if (x < lo) x = std::min(hi, 2 * lo - x);
    if (x > hi) x = std::max(lo, 2 * hi - x);
    if (is_extreme(category) && dropout == 0 && rng.uniform() < 0.03) dropout = 2 + static_cast<int>(rng.index(4));
    double v = x;
    if (dropout > 0) {
      v = 0.0;
      --dropout;
    }
    t.samples.emplace_back(i * step_s, v);
  }
  return t;
}

/// A viewer circling the scene center at `radius`, looking inward with slow
/// head motion; sampled at `rate_hz`.
inline FovTrace synth_fov(const Vec3& center, double radius, double duration_s, std::uint64_t seed,
                          double rate_hz = 30.0) {
  require(duration_s > 0.0 && rate_hz > 0.0 && radius > 0.0, "synth_fov: bad parameters");
  Rng rng(seed);
  const double theta0 = rng.uniform(0.0, 2 * std::numbers::pi);
  const double omega = rng.uniform(0.05, 0.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double height = rng.uniform(0.1, 0.5);
  const double wobble = rng.uniform(0.5, 1.5);
  FovTrace t;
  const int n = static_cast<int>(std::ceil(duration_s * rate_hz));
  for (int i = 0; i < n; ++i) {
    const double time = i / rate_hz;
    const double th = theta0 + omega * time;
    const Vec3 eye = center + Vec3(radius * std::sin(th), height * radius * 0.5, radius * std::cos(th));
    const Camera look = Camera::look_at(eye, center);
    FovPose p;
    p.position = eye;
    p.pitch = look.pitch + 0.05 * std::sin(wobble * time);
    p.yaw = look.yaw + 0.15 * std::sin(0.7 * wobble * time + 1.0);
    p.roll = 0.0;
    t.samples.emplace_back(time, p);
  }
  return t;
}

}  // namespace gsstream
