#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/geometry.hpp"
#include "gsstream/ladder.hpp"
#include "gsstream/nn.hpp"
#include "gsstream/primitive.hpp"
#include "gsstream/rng.hpp"

namespace gsstream {

struct HashGridSpec {
  int levels = 8;
  int features = 2;
  int table_size = 1 << 14;
  int base_resolution = 8;
  int finest_resolution = 128;
  std::uint64_t seed = 0;

  void validate() const {
    require(levels >= 1, "hash grid needs at least one level");
    require(features >= 1, "hash grid feature width must be >= 1");
    require(table_size >= 1 && (table_size & (table_size - 1)) == 0, "hash table size must be a power of two");
    require(base_resolution >= 1 && finest_resolution >= base_resolution, "hash grid resolutions out of order");
    for (int l = 1; l < levels; ++l)
      require(resolution(l) > resolution(l - 1), "hash grid resolutions must strictly increase");
  }

  /// Geometric progression from base to finest resolution.
  int resolution(int level) const {
    if (levels == 1) return base_resolution;
    const double growth =
        std::exp((std::log(finest_resolution) - std::log(base_resolution)) / static_cast<double>(levels - 1));
    return static_cast<int>(std::floor(base_resolution * std::pow(growth, level) + 1e-9));
  }

  int output_width() const { return levels * features; }

  friend bool operator==(const HashGridSpec&, const HashGridSpec&) = default;
};

/// The 8 table entries and trilinear weights one level contributes for a point.
struct LevelLookup {
  std::array<std::uint32_t, 8> entry{};
  std::array<double, 8> weight{};
};

struct HashGrid {
  HashGridSpec spec;
  std::vector<double> table;  // levels x table_size x features

  static HashGrid make(const HashGridSpec& spec, double init_scale = 1e-4) {
    spec.validate();
    HashGrid g;
    g.spec = spec;
    g.table.resize(static_cast<std::size_t>(spec.levels) * spec.table_size * spec.features);
    Rng rng(derive_seed(spec.seed, 0x68617368));
    for (double& v : g.table) v = rng.uniform(-init_scale, init_scale);
    return g;
  }

  /// Dense indexing while the level's vertex lattice fits in the table, spatial hash otherwise.
  std::uint32_t entry(int level, int ix, int iy, int iz) const {
    const auto res1 = static_cast<std::uint64_t>(spec.resolution(level)) + 1;
    const auto t = static_cast<std::uint64_t>(spec.table_size);
    if (res1 * res1 * res1 <= t) return static_cast<std::uint32_t>(ix + res1 * (iy + res1 * iz));
    const std::uint64_t salt = derive_seed(spec.seed, static_cast<std::uint64_t>(level));
    const std::uint64_t h = (static_cast<std::uint64_t>(ix) * 1ULL) ^ (static_cast<std::uint64_t>(iy) * 2654435761ULL) ^
                            (static_cast<std::uint64_t>(iz) * 805459861ULL) ^ salt;
    return static_cast<std::uint32_t>(h & (t - 1));
  }

  std::size_t offset(int level, std::uint32_t e) const {
    return (static_cast<std::size_t>(level) * spec.table_size + e) * spec.features;
  }

  /// Corner entries and weights for a point in the unit cube (clamped onto it).
  LevelLookup lookup(int level, const Vec3& unit) const {
    const int res = spec.resolution(level);
    int base[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      const double x = std::clamp(unit[a], 0.0, 1.0) * res;
      base[a] = std::min(static_cast<int>(std::floor(x)), res - 1);
      frac[a] = x - base[a];
    }
    LevelLookup lk;
    for (int c = 0; c < 8; ++c) {
      const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
      lk.entry[c] = entry(level, base[0] + dx, base[1] + dy, base[2] + dz);
      lk.weight[c] = (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) * (dz ? frac[2] : 1 - frac[2]);
    }
    return lk;
  }

  nn::Vector encode(const Vec3& unit) const {
    nn::Vector out(static_cast<std::size_t>(spec.output_width()), 0.0);
    for (int l = 0; l < spec.levels; ++l) {
      const auto lk = lookup(l, unit);
      for (int c = 0; c < 8; ++c) {
        const double* f = &table[offset(l, lk.entry[c])];
        for (int k = 0; k < spec.features; ++k) out[static_cast<std::size_t>(l * spec.features + k)] += lk.weight[c] * f[k];
      }
    }
    return out;
  }

  /// Scatters d(loss)/d(encoding) back into per-entry table gradients.
  void accumulate(const Vec3& unit, std::span<const double> upstream, std::vector<double>& grad) const {
    for (int l = 0; l < spec.levels; ++l) {
      const auto lk = lookup(l, unit);
      for (int c = 0; c < 8; ++c) {
        double* g = &grad[offset(l, lk.entry[c])];
        for (int k = 0; k < spec.features; ++k) g[k] += lk.weight[c] * upstream[static_cast<std::size_t>(l * spec.features + k)];
      }
    }
  }
};

inline nn::Vector hash_encode(const Vec3& unit, const HashGrid& grid) { return grid.encode(unit); }

struct Delta {
  Vec3 position = Vec3::Zero();
  Quat rotation{0, 0, 0, 0};  // raw head output; normalized when applied
};

struct DeformationField {
  HashGrid grid;
  nn::MlpSpec head;
  nn::ParamVector params;
  Box bounds;              // normalization box for positions
  int scope = -1;          // tile id or low-dynamic group id
  std::vector<int> frames;  // covered target frame indices within the GoF

  static DeformationField make(const HashGridSpec& spec, const Box& bounds, int hidden = 32, std::uint64_t seed = 0) {
    require(!bounds.empty(), "deformation field needs a non-empty bounding box");
    DeformationField f;
    f.grid = HashGrid::make(spec);
    f.head = nn::MlpSpec::make({spec.output_width(), hidden, 7}, nn::Activation::ReLU, nn::Activation::None, seed);
    f.params = nn::init_params(f.head);
    f.params.bias(1, 3) = 1.0;  // rotation output starts at the identity quaternion
    f.bounds = bounds;
    return f;
  }

  Vec3 to_unit(const Vec3& p) const { return bounds.to_unit(p); }

  std::size_t head_parameter_count() const { return params.size(); }
};

inline Delta predict_delta(const DeformationField& f, const Vec3& mu) {
  const auto y = nn::mlp_forward(f.head, f.params, f.grid.encode(f.to_unit(mu)));
  return {{y[0], y[1], y[2]}, {y[3], y[4], y[5], y[6]}};
}

inline constexpr double kMinDeltaQuatNorm = 1e-9;

inline Quat guarded_unit(const Quat& dq) { return dq.norm() < kMinDeltaQuatNorm ? Quat::identity() : normalized(dq); }

/// Delta at fraction tau of the field's span: the translation scales linearly and
/// the rotation is interpolated from the identity (normalized lerp).
inline Delta scale_delta(const Delta& d, double tau) {
  const Quat n = guarded_unit(d.rotation);
  Quat m{(1 - tau) + tau * n.w, tau * n.x, tau * n.y, tau * n.z};
  if (m.norm() < 1e-12) m = Quat::identity();
  return {tau * d.position, normalized(m)};
}

inline GaussianPrimitive apply_deform(const GaussianPrimitive& g, const Vec3& d_position, const Quat& d_rotation) {
  GaussianPrimitive out = g;
  out.position = g.position + d_position;
  out.rotation = normalized(multiply(normalized(g.rotation), guarded_unit(d_rotation)));
  return out;
}

struct FitConfig {
  int epochs = 500;
  double head_lr = 0.02;
  double table_lr = 2.0;
  double momentum = 0.5;
  double lambda_q = 0.1;
  double divergence_factor = 10.0;
};

struct FitReport {
  std::vector<double> loss_curve;
  std::vector<double> position_residual;  // per covered frame, mean distance after fitting
  std::vector<double> rotation_residual;  // per covered frame, mean 1 - <q', q_target>^2

  double max_position_residual() const {
    return position_residual.empty() ? 0.0 : *std::max_element(position_residual.begin(), position_residual.end());
  }
};

struct FitFrame {
  const Scene* scene = nullptr;  // ground truth for the target frame, indexed by primitive id
  double tau = 1.0;              // fraction of the field span this frame sits at
};

namespace detail {

/// Loss and d(loss)/d(head output) for one primitive across all frames.
inline double primitive_loss(const GaussianPrimitive& g, std::size_t id, std::span<const FitFrame> frames,
                             const nn::Vector& y, double lambda_q, nn::Vector* grad) {
  const Vec3 dmu(y[0], y[1], y[2]);
  const Quat raw{y[3], y[4], y[5], y[6]};
  const double raw_norm = raw.norm();
  const bool guarded = raw_norm < kMinDeltaQuatNorm;
  const Quat n = guarded ? Quat::identity() : normalized(raw);
  const Quat qc{g.rotation.w, -g.rotation.x, -g.rotation.y, -g.rotation.z};
  double loss = 0.0;
  Eigen::Vector4d dn = Eigen::Vector4d::Zero();
  Vec3 dd = Vec3::Zero();
  for (const auto& fr : frames) {
    const auto& target = fr.scene->at(id);
    const double tau = fr.tau;
    const Vec3 err = g.position + tau * dmu - target.position;
    loss += err.squaredNorm();
    dd += 2.0 * tau * err;
    const Quat wq = multiply(qc, target.rotation);  // <q x r, t> = <r, conj(q) x t>
    const Eigen::Vector4d w(wq.w, wq.x, wq.y, wq.z);
    const Eigen::Vector4d m((1 - tau) + tau * n.w, tau * n.x, tau * n.y, tau * n.z);
    const double mn = m.norm();
    if (mn < 1e-12) continue;
    const Eigen::Vector4d r = m / mn;
    const double c = r.dot(w);
    loss += lambda_q * (1.0 - c * c);
    const Eigen::Vector4d dr = -2.0 * lambda_q * c * w;
    const Eigen::Vector4d dm = (dr - r * r.dot(dr)) / mn;
    dn += tau * dm;
  }
  if (grad) {
    grad->assign(7, 0.0);
    for (int a = 0; a < 3; ++a) (*grad)[a] = dd[a];
    if (!guarded) {
      const Eigen::Vector4d nv(n.w, n.x, n.y, n.z);
      const Eigen::Vector4d dq = (dn - nv * nv.dot(dn)) / raw_norm;
      for (int a = 0; a < 4; ++a) (*grad)[3 + a] = dq[a];
    }
  }
  return loss;
}

}  // namespace detail

/// Mean fitting loss of a field over the given primitives and frames.
inline double fit_loss(const DeformationField& f, const Scene& keyframe, std::span<const std::size_t> ids,
                       std::span<const FitFrame> frames, double lambda_q) {
  double total = 0.0;
  for (auto id : ids) {
    const auto y = nn::mlp_forward(f.head, f.params, f.grid.encode(f.to_unit(keyframe.at(id).position)));
    total += detail::primitive_loss(keyframe.at(id), id, frames, y, lambda_q, nullptr);
  }
  return total / static_cast<double>(ids.size() * frames.size());
}

/// Full-batch momentum descent on the head parameters and the hash tables.
inline FitReport fit(DeformationField& f, const Scene& keyframe, std::span<const std::size_t> ids,
                     std::span<const FitFrame> frames, const FitConfig& cfg = {}) {
  require(!ids.empty(), "fit: no primitives");
  require(!frames.empty(), "fit: no target frames");
  for (const auto& fr : frames) require(fr.scene && fr.scene->size() == keyframe.size(), "fit: frame size mismatch");
  FitReport rep;
  nn::MomentumSgd head_opt(cfg.head_lr, cfg.momentum), table_opt(cfg.table_lr, cfg.momentum);
  const double norm = 1.0 / static_cast<double>(ids.size() * frames.size());
  std::vector<Vec3> unit(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) unit[i] = f.to_unit(keyframe.at(ids[i]).position);
  nn::Vector dy;
  for (int epoch = 0; epoch <= cfg.epochs; ++epoch) {
    auto head_grad = nn::ParamVector::zeros_like(f.params);
    std::vector<double> table_grad(f.grid.table.size(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto enc = f.grid.encode(unit[i]);
      const auto trace = nn::mlp_trace(f.head, f.params, enc);
      loss += detail::primitive_loss(keyframe.at(ids[i]), ids[i], frames, trace.output(), cfg.lambda_q, &dy);
      for (double& v : dy) v *= norm;
      const auto g = nn::mlp_backward(f.head, f.params, trace, dy);
      for (std::size_t k = 0; k < head_grad.size(); ++k) head_grad.values[k] += g.params.values[k];
      f.grid.accumulate(unit[i], g.input, table_grad);
    }
    loss *= norm;
    if (!std::isfinite(loss) || (!rep.loss_curve.empty() && loss > cfg.divergence_factor * rep.loss_curve.front() &&
                                 loss > 1e-12))
      throw DivergenceError("deformation fit diverged at epoch " + std::to_string(epoch) +
                            ": loss " + std::to_string(loss));
    rep.loss_curve.push_back(loss);
    if (epoch == cfg.epochs) break;
    head_opt.step(f.params.values, head_grad.values);
    table_opt.step(f.grid.table, table_grad);
  }
  for (const auto& fr : frames) {
    double pos = 0.0, rot = 0.0;
    for (auto id : ids) {
      const auto& g = keyframe.at(id);
      const Delta d = scale_delta(predict_delta(f, g.position), fr.tau);
      const auto moved = apply_deform(g, d.position, d.rotation);
      const auto& t = fr.scene->at(id);
      pos += (moved.position - t.position).norm();
      const double c = dot(moved.rotation, t.rotation);
      rot += 1.0 - c * c;
    }
    rep.position_residual.push_back(pos / static_cast<double>(ids.size()));
    rep.rotation_residual.push_back(rot / static_cast<double>(ids.size()));
  }
  return rep;
}

/// Deformed copies of `ids` at fraction tau of the GoF; a null field copies the keyframe.
inline Scene reconstruct(const Scene& keyframe, std::span<const std::size_t> ids, const DeformationField* field,
                         double tau) {
  Scene out;
  out.reserve(ids.size());
  for (auto id : ids) {
    const auto& g = keyframe.at(id);
    if (!field || tau == 0.0) {
      out.push_back(g);
      continue;
    }
    const Delta d = scale_delta(predict_delta(*field, g.position), tau);
    out.push_back(apply_deform(g, d.position, d.rotation));
  }
  return out;
}

/// Reconstruction of one tile at a ladder level; dynamic tiles must reference a field.
inline Scene reconstruct_tile(const Tile& tile, int level, const Scene& keyframe,
                              std::span<const DeformationField> fields, double tau) {
  const auto& ids = tile.ladder[level].retained;
  if (tile.motion_class == MotionClass::Static) return reconstruct(keyframe, ids, nullptr, tau);
  require(tile.field_id >= 0 && static_cast<std::size_t>(tile.field_id) < fields.size(),
          "tile " + std::to_string(tile.id) + " is dynamic but has no deformation field");
  return reconstruct(keyframe, ids, &fields[static_cast<std::size_t>(tile.field_id)], tau);
}

/// Distinct table entries touched by a set of keyframe positions.
inline std::size_t touched_entries(const DeformationField& f, const Scene& keyframe, std::span<const std::size_t> ids) {
  std::set<std::pair<int, std::uint32_t>> seen;
  for (auto id : ids) {
    const Vec3 u = f.to_unit(keyframe.at(id).position);
    for (int l = 0; l < f.grid.spec.levels; ++l) {
      const auto lk = f.grid.lookup(l, u);
      for (auto e : lk.entry) seen.emplace(l, e);
    }
  }
  return seen.size();
}

/// Bytes to ship the table entries a primitive set needs: entry index plus features, float32.
inline double table_payload_bytes(const DeformationField& f, const Scene& keyframe, std::span<const std::size_t> ids) {
  return static_cast<double>(touched_entries(f, keyframe, ids)) * (4.0 + 4.0 * f.grid.spec.features);
}

inline double head_payload_bytes(const DeformationField& f) { return 4.0 * static_cast<double>(f.params.size()); }

inline nn::Checkpoint field_checkpoint(const DeformationField& f) {
  nn::Checkpoint ck;
  ck.mlps.push_back({"head", f.head, f.params});
  const auto& s = f.grid.spec;
  ck.arrays.push_back({"grid_spec",
                       {double(s.levels), double(s.features), double(s.table_size), double(s.base_resolution),
                        double(s.finest_resolution), std::bit_cast<double>(s.seed)}});
  ck.arrays.push_back({"tables", f.grid.table});
  ck.arrays.push_back({"bounds", {f.bounds.lo.x(), f.bounds.lo.y(), f.bounds.lo.z(), f.bounds.hi.x(), f.bounds.hi.y(),
                                  f.bounds.hi.z(), double(f.scope)}});
  nn::Vector frames(f.frames.begin(), f.frames.end());
  ck.arrays.push_back({"frames", frames});
  return ck;
}

inline DeformationField field_from_checkpoint(const nn::Checkpoint& ck) {
  DeformationField f;
  const auto& spec = ck.array("grid_spec");
  require(spec.size() == 6, "field checkpoint: bad grid header");
  f.grid.spec = {static_cast<int>(spec[0]), static_cast<int>(spec[1]), static_cast<int>(spec[2]),
                 static_cast<int>(spec[3]), static_cast<int>(spec[4]), std::bit_cast<std::uint64_t>(spec[5])};
  f.grid.spec.validate();
  f.grid.table = ck.array("tables");
  require(f.grid.table.size() ==
              static_cast<std::size_t>(f.grid.spec.levels) * f.grid.spec.table_size * f.grid.spec.features,
          "field checkpoint: table size mismatch");
  const auto& head = ck.mlp("head");
  f.head = head.spec;
  f.params = head.params;
  require(f.head.output_width() == 7 && f.head.input_width() == f.grid.spec.output_width(),
          "field checkpoint: head shape mismatch");
  const auto& b = ck.array("bounds");
  require(b.size() == 7, "field checkpoint: bad bounds");
  f.bounds.lo = {b[0], b[1], b[2]};
  f.bounds.hi = {b[3], b[4], b[5]};
  f.scope = static_cast<int>(b[6]);
  for (double v : ck.array("frames")) f.frames.push_back(static_cast<int>(v));
  return f;
}

}  // namespace gsstream
