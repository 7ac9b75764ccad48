// gsstream command-line driver. Every subcommand prints one JSON object on
// stdout; exit status 0 on success, 2 on validation errors, 1 otherwise.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gsstream/gsstream.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gsstream;

namespace {

struct SceneOptions {
  int frames = 60;
  int scale = 1;
};

struct TraceOptions {
  double bandwidth_duration_s = 300.0;
  double fov_duration_s = 60.0;
  double fov_radius_factor = 1.0;  // orbit radius in scene diagonals
  double fov_rate_hz = 30.0;
};

struct SaliencyOptions {
  SaliencyTrainConfig train;
  int samples_per_tile = 64;
};

struct Settings {
  SceneOptions scene;
  TraceOptions traces;
  PipelineConfig pipeline;
  SessionConfig session;
  MetaConfig meta = session_meta_config();
  int traces_per_task = 4;
  SaliencyOptions saliency;
};

// ---- configuration file --------------------------------------------------

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  require(obj.is_object(), "config: " + (where.empty() ? std::string("top level") : where) + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    require(ok.count(key) > 0, "config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <class T>
void take(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = obj.at(key).get<T>();
}

Settings parse_settings(const json& j) {
  Settings s;
  check_keys(j, "", {"scene", "traces", "pipeline", "session", "qoe", "meta", "saliency"});
  if (j.contains("scene")) {
    const auto& o = j["scene"];
    check_keys(o, "scene", {"frames", "scale"});
    take(o, "frames", s.scene.frames);
    take(o, "scale", s.scene.scale);
  }
  if (j.contains("traces")) {
    const auto& o = j["traces"];
    check_keys(o, "traces", {"bandwidth_duration_s", "fov_duration_s", "fov_radius_factor", "fov_rate_hz"});
    take(o, "bandwidth_duration_s", s.traces.bandwidth_duration_s);
    take(o, "fov_duration_s", s.traces.fov_duration_s);
    take(o, "fov_radius_factor", s.traces.fov_radius_factor);
    take(o, "fov_rate_hz", s.traces.fov_rate_hz);
  }
  if (j.contains("pipeline")) {
    const auto& o = j["pipeline"];
    check_keys(o, "pipeline",
               {"gof_frames", "grid", "target_tiles", "field_hidden", "fit_epochs", "fit_stride", "static_fraction",
                "high_fraction", "group_tau", "score_resolution", "seed"});
    auto& p = s.pipeline;
    take(o, "gof_frames", p.gof_frames);
    if (o.contains("grid")) {
      const auto g = o["grid"].get<std::vector<int>>();
      require(g.size() == 3, "config: pipeline.grid must be [nx, ny, nz]");
      p.grid = GridSpec{g[0], g[1], g[2]};
    }
    take(o, "target_tiles", p.target_tiles);
    take(o, "field_hidden", p.field_hidden);
    take(o, "fit_epochs", p.fit.epochs);
    take(o, "fit_stride", p.fit_stride);
    take(o, "static_fraction", p.static_fraction);
    take(o, "high_fraction", p.high_fraction);
    take(o, "group_tau", p.group_tau);
    take(o, "score_resolution", p.score_resolution);
    take(o, "seed", p.seed);
  }
  if (j.contains("session")) {
    const auto& o = j["session"];
    check_keys(o, "session",
               {"gofs", "viewport_width", "viewport_height", "viewport_fov", "fov_noise_rad", "stall_timeout_s",
                "render_viewport"});
    auto& c = s.session;
    take(o, "gofs", c.gofs);
    take(o, "viewport_width", c.viewport_width);
    take(o, "viewport_height", c.viewport_height);
    take(o, "viewport_fov", c.viewport_fov);
    take(o, "fov_noise_rad", c.fov_noise_rad);
    take(o, "stall_timeout_s", c.stall_timeout_s);
    take(o, "render_viewport", c.render_viewport);
  }
  if (j.contains("qoe")) {
    const auto& o = j["qoe"];
    check_keys(o, "qoe",
               {"lambda", "mu", "sigma_w", "eta", "alpha_mix", "gamma_sal", "beta_att", "delta_smooth", "gof_seconds",
                "cores", "buffer_max_s"});
    auto& q = s.session.qoe;
    take(o, "lambda", q.weights.lambda);
    take(o, "mu", q.weights.mu);
    take(o, "sigma_w", q.weights.sigma_w);
    take(o, "eta", q.weights.eta);
    take(o, "alpha_mix", q.alpha_mix);
    take(o, "gamma_sal", q.gamma_sal);
    take(o, "beta_att", q.beta_att);
    take(o, "delta_smooth", q.delta_smooth);
    take(o, "gof_seconds", q.gof_seconds);
    take(o, "cores", q.cores);
    take(o, "buffer_max_s", q.buffer_max_s);
  }
  if (j.contains("meta")) {
    const auto& o = j["meta"];
    check_keys(o, "meta",
               {"inner_steps", "inner_lr", "outer_lr", "outer_momentum", "discount", "kl_coef", "horizon",
                "support_episodes", "query_episodes", "iterations", "clip", "traces_per_task"});
    auto& m = s.meta;
    take(o, "inner_steps", m.inner_steps);
    take(o, "inner_lr", m.inner_lr);
    take(o, "outer_lr", m.outer_lr);
    take(o, "outer_momentum", m.outer_momentum);
    take(o, "discount", m.discount);
    take(o, "kl_coef", m.kl_coef);
    take(o, "horizon", m.horizon);
    take(o, "support_episodes", m.support_episodes);
    take(o, "query_episodes", m.query_episodes);
    take(o, "iterations", m.iterations);
    take(o, "clip", m.clip);
    take(o, "traces_per_task", s.traces_per_task);
  }
  if (j.contains("saliency")) {
    const auto& o = j["saliency"];
    check_keys(o, "saliency", {"epochs", "learning_rate", "momentum", "samples_per_tile"});
    take(o, "epochs", s.saliency.train.epochs);
    take(o, "learning_rate", s.saliency.train.learning_rate);
    take(o, "momentum", s.saliency.train.momentum);
    take(o, "samples_per_tile", s.saliency.samples_per_tile);
  }
  require(s.scene.frames >= 2 && s.scene.scale >= 1, "config: scene needs >= 2 frames and scale >= 1");
  require(s.traces.bandwidth_duration_s > 0 && s.traces.fov_duration_s > 0 && s.traces.fov_radius_factor > 0 &&
              s.traces.fov_rate_hz > 0,
          "config: trace durations, radius and rate must be positive");
  require(s.traces_per_task >= 1, "config: meta.traces_per_task must be >= 1");
  require(s.saliency.samples_per_tile >= 1, "config: saliency.samples_per_tile must be >= 1");
  s.pipeline.validate();
  s.session.validate();
  s.meta.validate();
  return s;
}

Settings load_settings(const std::string& path) {
  if (path.empty()) return parse_settings(json::object());
  std::ifstream in(path);
  if (!in) throw ValidationError("config not found: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  try {
    return parse_settings(j);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
}

// ---- shared helpers ----------------------------------------------------------

struct Common {
  std::uint64_t seed = 1;
  std::string config;
  std::string out = "out";
};

struct Inputs {
  std::string scene;
  std::string trace;
  std::string category = "Std4G";
  std::string fov;
  std::string saliency;
  std::string policy = "greedy";
};

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return fs::path(c.out);
}

std::string text_of(const auto& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

std::optional<SaliencyNet> load_saliency(const std::string& path) {
  if (path.empty()) return std::nullopt;
  if (!fs::exists(path)) throw ValidationError("saliency checkpoint not found: " + path);
  return saliency_from_checkpoint(nn::load_checkpoint(path));
}

PolicyNet load_policy(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("policy checkpoint not found: " + path);
  return policy_from_checkpoint(nn::load_checkpoint(path));
}

EncodedContent encode(const std::vector<Scene>& frames, const Settings& s, const Common& c,
                      const std::optional<SaliencyNet>& net) {
  PipelineConfig pc = s.pipeline;
  pc.seed = derive_seed(c.seed, pc.seed);
  return encode_content(frames, pc, net ? &*net : nullptr);
}

FovTrace fov_for(const Inputs& in, const EncodedContent& content, const Settings& s, const Common& c) {
  if (!in.fov.empty()) {
    if (!fs::exists(in.fov)) throw ValidationError("FoV trace not found: " + in.fov);
    return load_fov(in.fov);
  }
  return synth_fov(content.bounds.center(), s.traces.fov_radius_factor * content.bounds.diagonal(),
                   s.traces.fov_duration_s, derive_seed(c.seed, 0x666f76ULL), s.traces.fov_rate_hz);
}

BandwidthTrace bandwidth_for(const Inputs& in, const Settings& s, const Common& c) {
  const auto cat = trace_category_from_string(in.category);
  if (!in.trace.empty()) {
    if (!fs::exists(in.trace)) throw ValidationError("bandwidth trace not found: " + in.trace);
    return load_bandwidth(in.trace, cat);
  }
  return synth_bandwidth(cat, s.traces.bandwidth_duration_s, derive_seed(c.seed, static_cast<std::uint64_t>(cat)));
}

SessionConfig session_config(const Settings& s, const Common& c) {
  SessionConfig sc = s.session;
  sc.seed = derive_seed(c.seed, sc.seed);
  return sc;
}

json summary_json(const SessionSummary& s) {
  return {{"policy", s.policy},
          {"gofs", s.gofs},
          {"mean_qoe", s.mean_qoe},
          {"total_stall_s", s.total_stall_s},
          {"stall_count", s.stall_count},
          {"mean_smoothness", s.mean_smoothness},
          {"fov_match_rate", s.fov_match_rate},
          {"mean_reward", s.mean_reward},
          {"total_bytes", s.total_bytes},
          {"playback_s", s.playback_s},
          {"wall_clock_s", s.wall_clock_s}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- subcommands --------------------------------------------------------------

json cmd_generate(const Common& c, const Settings& s) {
  const auto dir = out_dir(c);
  const auto frames = synth_scene(default_scene_spec(s.scene.frames, s.scene.scale), derive_seed(c.seed, 1));
  save_sequence(frames, dir / "scene");
  fs::create_directories(dir / "traces");
  json traces = json::array();
  for (auto cat : kTraceCategories) {
    const auto t = synth_bandwidth(cat, s.traces.bandwidth_duration_s, derive_seed(c.seed, 0x100 + static_cast<int>(cat)));
    const auto path = dir / "traces" / (std::string(to_string(cat)) + ".csv");
    write_text_file(path, text_of([&](std::ostream& o) { write_bandwidth(t, o); }));
    traces.push_back(path.string());
  }
  Box bounds;
  for (const auto& f : frames) bounds.extend(bounding_box(f));
  const auto fov = synth_fov(bounds.center(), s.traces.fov_radius_factor * bounds.diagonal(), s.traces.fov_duration_s,
                             derive_seed(c.seed, 0x666f76ULL), s.traces.fov_rate_hz);
  write_text_file(dir / "fov.csv", text_of([&](std::ostream& o) { write_fov(fov, o); }));
  return {{"command", "generate"},
          {"scene", (dir / "scene").string()},
          {"frames", frames.size()},
          {"primitives", frames.front().size()},
          {"bandwidth_traces", traces},
          {"fov_trace", (dir / "fov.csv").string()},
          {"fov_samples", fov.samples.size()}};
}

json cmd_saliency_train(const Common& c, const Settings& s, const Inputs& in) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto frames = load_sequence(in.scene);
  const auto dir = out_dir(c);
  Box bounds;
  for (const auto& f : frames) bounds.extend(bounding_box(f));
  const auto gof = static_cast<std::size_t>(s.pipeline.gof_frames);
  std::vector<std::vector<Tile>> tiles;
  std::vector<const Scene*> keys;
  for (std::size_t i = 0; i + 1 < frames.size(); i += gof) keys.push_back(&frames[i]);
  require(keys.size() >= 2, "saliency-train: need at least two GoFs (" + std::to_string(keys.size()) + " found)");
  std::vector<SaliencySample> samples;
  for (std::size_t g = 1; g < keys.size(); ++g) {
    tiles.push_back(uniform_partition(*keys[g], s.pipeline.grid, static_cast<int>(g), bounds));
    samples.push_back({make_saliency_input(*keys[g], keys[g - 1], tiles.back(), s.saliency.samples_per_tile,
                                           derive_seed(c.seed, g)),
                       oracle_scores(*keys[g], keys[g - 1], tiles.back())});
  }
  SaliencyNetConfig nc;
  nc.samples_per_tile = s.saliency.samples_per_tile;
  nc.seed = derive_seed(c.seed, 0x73616cULL);
  auto net = SaliencyNet::make(nc);
  const auto rep = train_saliency(net, samples, s.saliency.train);
  double tau = 0.0;
  for (const auto& smp : samples) tau += kendall_tau(evaluate_saliency(net, smp.input).scores, smp.target);
  tau /= static_cast<double>(samples.size());
  nn::save_checkpoint(saliency_checkpoint(net), (dir / "saliency.ckpt").string());
  std::ostringstream log;
  log << "epoch,loss\n";
  for (std::size_t e = 0; e < rep.loss_curve.size(); ++e) log << e << "," << detail::num(rep.loss_curve[e]) << "\n";
  write_text_file(dir / "saliency_loss.csv", log.str());
  return {{"command", "saliency-train"},
          {"samples", samples.size()},
          {"initial_loss", rep.loss_curve.front()},
          {"final_loss", rep.final_loss},
          {"mean_kendall_tau", tau},
          {"checkpoint", (dir / "saliency.ckpt").string()},
          {"seconds", seconds_since(t0)}};
}

json cmd_tile(const Common& c, const Settings& s, const Inputs& in) {
  const auto frames = load_sequence(in.scene);
  const auto net = load_saliency(in.saliency);
  const auto dir = out_dir(c);
  Box bounds;
  for (const auto& f : frames) bounds.extend(bounding_box(f));
  const auto& p = s.pipeline;
  std::ostringstream out;
  out << "gof,tile,cells,primitives,saliency,bbox_lo,bbox_hi\n";
  json per_gof = json::array();
  const Scene* prev = nullptr;
  int g = 0;
  for (std::size_t first = 0; first + 1 < frames.size(); first += static_cast<std::size_t>(p.gof_frames), ++g) {
    const Scene& key = frames[first];
    auto uniform = uniform_partition(key, p.grid, g, bounds);
    const auto scores =
        net ? evaluate_saliency(*net, make_saliency_input(key, prev, uniform, net->cfg.samples_per_tile,
                                                          derive_seed(c.seed, static_cast<std::uint64_t>(g))))
                  .scores
            : oracle_scores(key, prev, uniform);
    for (std::size_t i = 0; i < uniform.size(); ++i) uniform[i].saliency = scores[i];
    const auto res = cluster(uniform, p.grid, std::min(p.target_tiles, static_cast<int>(uniform.size())));
    for (const auto& t : res.tiles) {
      out << g << "," << t.id << ",";
      for (std::size_t k = 0; k < t.cells.size(); ++k) out << (k ? " " : "") << t.cells[k];
      out << "," << t.primitive_ids.size() << "," << detail::num(t.saliency) << "," << detail::num(t.bbox.lo.x())
          << " " << detail::num(t.bbox.lo.y()) << " " << detail::num(t.bbox.lo.z()) << ","
          << detail::num(t.bbox.hi.x()) << " " << detail::num(t.bbox.hi.y()) << " " << detail::num(t.bbox.hi.z())
          << "\n";
    }
    per_gof.push_back({{"gof", g},
                       {"uniform_tiles", uniform.size()},
                       {"tiles", res.tiles.size()},
                       {"merges", res.merges},
                       {"warning", res.warning}});
    prev = &key;
  }
  write_text_file(dir / "tiles.csv", out.str());
  return {{"command", "tile"}, {"saliency", net ? "network" : "oracle"}, {"gofs", per_gof},
          {"tiles", (dir / "tiles.csv").string()}};
}

json cmd_encode(const Common& c, const Settings& s, const Inputs& in) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto frames = load_sequence(in.scene);
  const auto content = encode(frames, s, c, load_saliency(in.saliency));
  const auto dir = out_dir(c);
  write_text_file(dir / "manifest.txt", text_of([&](std::ostream& o) { write_manifest(content, o); }));
  fs::create_directories(dir / "fields");
  std::size_t fields = 0, tiles = 0;
  for (const auto& g : content.gofs) {
    tiles += g.tiles.size();
    for (std::size_t f = 0; f < g.fields.size(); ++f, ++fields) {
      char name[64];
      std::snprintf(name, sizeof name, "gof%03d_field%02zu.ckpt", g.index, f);
      nn::save_checkpoint(field_checkpoint(g.fields[f]), (dir / "fields" / name).string());
    }
  }
  return {{"command", "encode"},
          {"gofs", content.gofs.size()},
          {"tiles", tiles},
          {"fields", fields},
          {"manifest", (dir / "manifest.txt").string()},
          {"seconds", seconds_since(t0)}};
}

SessionPolicy parse_policy(const std::string& spec, std::optional<PolicyNet>& storage) {
  if (spec == "greedy") return {PolicyKind::Greedy};
  if (spec == "buffer") return {PolicyKind::Buffer};
  const std::string prefix = "policy:";
  if (spec.rfind(prefix, 0) == 0) {
    storage = load_policy(spec.substr(prefix.size()));
    return {PolicyKind::Learned, &*storage, false};
  }
  throw ValidationError("unknown policy '" + spec + "' (expected greedy, buffer or policy:<checkpoint>)");
}

json cmd_simulate(const Common& c, const Settings& s, const Inputs& in) {
  const auto frames = load_sequence(in.scene);
  std::optional<PolicyNet> net;
  const auto pol = parse_policy(in.policy, net);
  const auto bw = bandwidth_for(in, s, c);
  const auto content = encode(frames, s, c, load_saliency(in.saliency));
  const auto sc = session_config(s, c);
  const auto views = build_views(content, fov_for(in, content, s, c), sc);
  const auto res = run_session(&content, views, bw, pol, sc);
  const auto dir = out_dir(c);
  write_text_file(dir / "session.csv", text_of([&](std::ostream& o) { write_session_csv(res.rows, o); }));
  write_text_file(dir / "summary.txt", text_of([&](std::ostream& o) { write_summary(res.summary, o); }));
  return {{"command", "simulate"},
          {"category", to_string(bw.category)},
          {"summary", summary_json(res.summary)},
          {"session_log", (dir / "session.csv").string()},
          {"summary_file", (dir / "summary.txt").string()}};
}

json cmd_train_abr(const Common& c, const Settings& s, const Inputs& in) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto frames = load_sequence(in.scene);
  const auto content = encode(frames, s, c, load_saliency(in.saliency));
  auto sc = session_config(s, c);
  sc.gofs = s.meta.horizon;
  const auto views =
      std::make_shared<const std::vector<GofView>>(build_views(content, fov_for(in, content, s, c), sc));
  const auto tasks = category_tasks(views, kTraceCategories, s.traces_per_task, s.traces.bandwidth_duration_s,
                                    derive_seed(c.seed, 0x7461736bULL), sc);
  PolicyConfig pc;
  pc.initial_weights = s.session.qoe.weights;
  pc.seed = derive_seed(c.seed, 0x706f6cULL);
  std::vector<double> curve;
  const auto net = meta_train(PolicyNet::make(pc), tasks, s.meta, derive_seed(c.seed, 0x6d657461ULL), &curve);
  const auto dir = out_dir(c);
  nn::save_checkpoint(policy_checkpoint(net), (dir / "policy.ckpt").string());
  std::ostringstream log;
  log << "iteration,mean_query_return\n";
  for (std::size_t i = 0; i < curve.size(); ++i) log << i << "," << detail::num(curve[i]) << "\n";
  write_text_file(dir / "training_log.csv", log.str());
  return {{"command", "train-abr"},
          {"tasks", tasks.size()},
          {"iterations", s.meta.iterations},
          {"first_query_return", curve.empty() ? 0.0 : curve.front()},
          {"last_query_return", curve.empty() ? 0.0 : curve.back()},
          {"checkpoint", (dir / "policy.ckpt").string()},
          {"training_log", (dir / "training_log.csv").string()},
          {"seconds", seconds_since(t0)}};
}

json cmd_eval(const Common& c, const Settings& s, const Inputs& in, const std::string& checkpoint) {
  const auto frames = load_sequence(in.scene);
  const auto content = encode(frames, s, c, load_saliency(in.saliency));
  const auto sc = session_config(s, c);
  const auto views = build_views(content, fov_for(in, content, s, c), sc);
  std::optional<PolicyNet> net;
  if (!checkpoint.empty()) net = load_policy(checkpoint);
  std::vector<SessionPolicy> policies{{PolicyKind::Greedy}, {PolicyKind::Buffer}};
  if (net) policies.push_back({PolicyKind::Learned, &*net, false});
  std::ostringstream table;
  table << "category,policy,mean_qoe,total_stall_s,stall_count,mean_smoothness,fov_match_rate,total_bytes\n";
  json rows = json::array();
  for (auto cat : kTraceCategories) {
    const auto bw = synth_bandwidth(cat, s.traces.bandwidth_duration_s, derive_seed(c.seed, static_cast<std::uint64_t>(cat)));
    for (const auto& pol : policies) {
      const auto r = run_session(&content, views, bw, pol, sc).summary;
      table << to_string(cat) << "," << r.policy << "," << detail::num(r.mean_qoe) << ","
            << detail::num(r.total_stall_s) << "," << r.stall_count << "," << detail::num(r.mean_smoothness) << ","
            << detail::num(r.fov_match_rate) << "," << detail::num(r.total_bytes) << "\n";
      auto j = summary_json(r);
      j["category"] = to_string(cat);
      rows.push_back(j);
    }
  }
  const auto dir = out_dir(c);
  write_text_file(dir / "eval.csv", table.str());
  return {{"command", "eval"}, {"table", (dir / "eval.csv").string()}, {"rows", rows}};
}

json cmd_render(const Common& c, const Settings& s, const Inputs& in, const std::vector<int>& frame_ids,
                int width, int height) {
  const auto frames = load_sequence(in.scene);
  require(width >= 16 && height >= 16, "render: image must be at least 16x16");
  Box bounds;
  for (const auto& f : frames) bounds.extend(bounding_box(f));
  std::optional<FovTrace> fov;
  if (!in.fov.empty()) {
    if (!fs::exists(in.fov)) throw ValidationError("FoV trace not found: " + in.fov);
    fov = load_fov(in.fov);
  }
  const auto dir = out_dir(c);
  json images = json::array();
  std::vector<int> ids = frame_ids;
  if (ids.empty())
    for (int i = 0; i < static_cast<int>(frames.size()); i += s.pipeline.gof_frames) ids.push_back(i);
  Camera intr;
  intr.width = width;
  intr.height = height;
  intr.fov_x = intr.fov_y = s.session.viewport_fov;
  for (int i : ids) {
    require(i >= 0 && i < static_cast<int>(frames.size()),
            "render: frame " + std::to_string(i) + " outside [0, " + std::to_string(frames.size()) + ")");
    Camera cam = fov ? fov->camera_at(i / s.traces.fov_rate_hz, intr) : framing_camera(bounds, width);
    cam.width = width;
    cam.height = height;
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.ppm", i);
    write_ppm(render(frames[static_cast<std::size_t>(i)], cam), (dir / name).string());
    images.push_back((dir / name).string());
  }
  return {{"command", "render"}, {"camera", fov ? "fov" : "framing"}, {"images", images}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gsstream: tiled Gaussian-splat volumetric video streaming toolkit"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "base seed")->capture_default_str();
  app.add_option("--config", common.config, "JSON settings file");
  app.add_option("--out", common.out, "output directory")->capture_default_str();

  Inputs in;
  auto add_scene = [&](CLI::App* sub) { sub->add_option("--scene", in.scene, "scene file or frame directory")->required(); };
  auto add_saliency = [&](CLI::App* sub) { sub->add_option("--saliency", in.saliency, "saliency checkpoint (oracle scores otherwise)"); };
  auto add_fov = [&](CLI::App* sub) { sub->add_option("--fov", in.fov, "FoV trace (synthetic orbit otherwise)"); };

  auto* generate = app.add_subcommand("generate", "write a synthetic scene sequence, bandwidth and FoV traces");
  auto* sal = app.add_subcommand("saliency-train", "fit the saliency network to oracle tile scores");
  add_scene(sal);
  auto* tile = app.add_subcommand("tile", "partition and cluster each GoF keyframe");
  add_scene(tile);
  add_saliency(tile);
  auto* enc = app.add_subcommand("encode", "build quality ladders and fit deformation fields");
  add_scene(enc);
  add_saliency(enc);
  auto* sim = app.add_subcommand("simulate", "run one streaming session");
  add_scene(sim);
  add_saliency(sim);
  add_fov(sim);
  sim->add_option("--trace", in.trace, "bandwidth trace (synthetic of --category otherwise)");
  sim->add_option("--category", in.category, "trace category: Std4G, Ext4G, Std5G, Ext5G")->capture_default_str();
  sim->add_option("--policy", in.policy, "greedy, buffer or policy:<checkpoint>")->capture_default_str();
  auto* train = app.add_subcommand("train-abr", "meta-train the rate adaptation policy");
  add_scene(train);
  add_saliency(train);
  add_fov(train);
  auto* ev = app.add_subcommand("eval", "compare policies across trace categories");
  std::string checkpoint;
  add_scene(ev);
  add_saliency(ev);
  add_fov(ev);
  ev->add_option("--policy-checkpoint", checkpoint, "include a learned policy");
  auto* rend = app.add_subcommand("render", "render frames to PPM images");
  std::vector<int> frame_ids;
  int width = 256, height = 256;
  add_scene(rend);
  add_fov(rend);
  rend->add_option("--frames", frame_ids, "frame indices (GoF keyframes otherwise)");
  rend->add_option("--width", width)->capture_default_str();
  rend->add_option("--height", height)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const Settings s = load_settings(common.config);
    json out;
    if (*generate) out = cmd_generate(common, s);
    else if (*sal) out = cmd_saliency_train(common, s, in);
    else if (*tile) out = cmd_tile(common, s, in);
    else if (*enc) out = cmd_encode(common, s, in);
    else if (*sim) out = cmd_simulate(common, s, in);
    else if (*train) out = cmd_train_abr(common, s, in);
    else if (*ev) out = cmd_eval(common, s, in, checkpoint);
    else if (*rend) out = cmd_render(common, s, in, frame_ids, width, height);
    out["seed"] = common.seed;
    std::cout << out.dump(2) << "\n";
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cout << json{{"error", "validation"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    std::cout << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}
