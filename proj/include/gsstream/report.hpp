#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "gsstream/pipeline.hpp"
#include "gsstream/simulator.hpp"

namespace gsstream {

namespace detail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kSessionCsvHeader =
    "gof,content_gof,request_s,mbps,budget_bytes,bytes,bytes_visible,visible_tiles,transmitted_tiles,"
    "encoded_tiles,mean_level,q_geo,q_render,ssim_fov,t_e,t_r,t_d,t_u,stall_s,stall_event,starved,buffer_s,"
    "qoe,smoothness,reward";

inline void write_session_csv(std::span<const GofLogRow> rows, std::ostream& out) {
  using detail::num;
  out << kSessionCsvHeader << "\n";
  for (const auto& r : rows)
    out << r.gof << "," << r.content_gof << "," << num(r.request_s) << "," << num(r.mbps) << ","
        << num(r.budget_bytes) << "," << num(r.bytes) << "," << num(r.bytes_visible) << "," << r.visible_tiles
        << "," << r.transmitted_tiles << "," << r.encoded_tiles << "," << num(r.mean_level) << ","
        << num(r.q_geo) << "," << num(r.q_render) << "," << num(r.ssim_fov) << "," << num(r.t_e) << ","
        << num(r.t_r) << "," << num(r.t_d) << "," << num(r.t_u) << "," << num(r.stall_s) << ","
        << r.stall_event << "," << (r.starved ? 1 : 0) << "," << num(r.buffer_s) << "," << num(r.qoe) << ","
        << num(r.smoothness) << "," << num(r.reward) << "\n";
}

/// "key = value" lines.
inline void write_summary(const SessionSummary& s, std::ostream& out) {
  using detail::num;
  out << "policy = " << s.policy << "\n"
      << "gofs = " << s.gofs << "\n"
      << "mean_qoe = " << num(s.mean_qoe) << "\n"
      << "total_stall_s = " << num(s.total_stall_s) << "\n"
      << "stall_count = " << s.stall_count << "\n"
      << "mean_smoothness = " << num(s.mean_smoothness) << "\n"
      << "fov_match_rate = " << num(s.fov_match_rate) << "\n"
      << "mean_reward = " << num(s.mean_reward) << "\n"
      << "total_bytes = " << num(s.total_bytes) << "\n"
      << "playback_s = " << num(s.playback_s) << "\n"
      << "wall_clock_s = " << num(s.wall_clock_s) << "\n";
}

/// Per GoF a key-value header, then one table row per tile and level.
inline void write_manifest(const EncodedContent& c, std::ostream& out) {
  using detail::num;
  out << "gofs = " << c.gofs.size() << "\n"
      << "gof_frames = " << c.cfg.gof_frames << "\n"
      << "bounds_lo = " << num(c.bounds.lo.x()) << " " << num(c.bounds.lo.y()) << " " << num(c.bounds.lo.z()) << "\n"
      << "bounds_hi = " << num(c.bounds.hi.x()) << " " << num(c.bounds.hi.y()) << " " << num(c.bounds.hi.z()) << "\n";
  for (const auto& g : c.gofs) {
    out << "\n[gof " << g.index << "]\n"
        << "first_frame = " << g.first_frame << "\n"
        << "frames = " << g.frames << "\n"
        << "uniform_tiles = " << g.uniform_tiles << "\n"
        << "tiles = " << g.tiles.size() << "\n"
        << "merges = " << g.merges << "\n";
    if (!g.cluster_warning.empty()) out << "cluster_warning = " << g.cluster_warning << "\n";
    out << "fields = " << g.fields.size() << "\n"
        << "mean_displacement = " << num(g.mean_displacement) << "\n"
        << "max_displacement = " << num(g.max_displacement) << "\n";
    for (std::size_t f = 0; f < g.fit_reports.size(); ++f)
      out << "field " << f << " scope = " << g.fields[f].scope
          << " final_loss = " << num(g.fit_reports[f].loss_curve.back())
          << " max_position_residual = " << num(g.fit_reports[f].max_position_residual()) << "\n";
    out << "tile,cells,primitives,saliency,saliency_norm,motion,field,level,prune,retained,size_encoded,"
           "size_reconstructed,decode_s,psnr,ssim\n";
    for (std::size_t k = 0; k < g.tiles.size(); ++k) {
      const auto& t = g.tiles[k];
      for (int r = 0; r < kQualityLevels; ++r) {
        const auto& lv = t.ladder[r];
        out << t.id << "," << t.cells.size() << "," << t.primitive_ids.size() << "," << num(t.saliency) << ","
            << num(g.saliency_norm[k]) << "," << to_string(t.motion_class) << "," << t.field_id << "," << r << ","
            << num(lv.cumulative_prune_fraction) << "," << lv.retained.size() << "," << num(lv.size_encoded_bytes)
            << "," << num(lv.size_reconstructed_bytes) << "," << num(lv.decode_time_s) << "," << num(lv.psnr_db)
            << "," << num(lv.ssim) << "\n";
      }
    }
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), "write failed: " + path.string());
}

inline std::string frame_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.bin", i);
  return buf;
}

/// Writes frame_0000.bin, frame_0001.bin, ... into `dir`.
inline void save_sequence(std::span<const Scene> frames, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) save_scene(frames[i], (dir / frame_file_name(i)).string());
}

/// A directory of frame_NNNN files, or a single scene file repeated `static_frames`
/// times as a static sequence.
inline std::vector<Scene> load_sequence(const std::filesystem::path& path, int static_frames = 30) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw ValidationError("scene not found: " + path.string());
  std::vector<Scene> frames;
  if (fs::is_directory(path)) {
    for (std::size_t i = 0;; ++i) {
      const auto f = path / frame_file_name(i);
      if (!fs::exists(f)) break;
      frames.push_back(load_scene(f.string()));
    }
    if (frames.empty()) throw ValidationError("scene directory has no frame_0000.bin: " + path.string());
  } else {
    require(static_frames >= 2, "static scene needs at least two frames");
    frames.assign(static_cast<std::size_t>(static_frames), load_scene(path.string()));
  }
  for (const auto& f : frames)
    if (f.empty() || f.size() != frames.front().size())
      throw ValidationError("scene frames must be non-empty and share primitive indexing: " + path.string());
  return frames;
}

}  // namespace gsstream
