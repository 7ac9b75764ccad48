#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "gsstream/errors.hpp"
#include "gsstream/rng.hpp"

namespace gsstream::nn {

using Vector = std::vector<double>;

enum class Activation : std::uint8_t { None = 0, ReLU = 1 };

/// widths = {input, hidden..., output}; one activation per layer.
struct MlpSpec {
  std::vector<int> widths;
  std::vector<Activation> activations;
  std::uint64_t seed = 0;

  static MlpSpec make(std::vector<int> widths, Activation hidden = Activation::ReLU,
                      Activation output = Activation::None, std::uint64_t seed = 0) {
    MlpSpec s;
    s.widths = std::move(widths);
    const std::size_t layers = s.widths.size() >= 1 ? s.widths.size() - 1 : 0;
    for (std::size_t l = 0; l < layers; ++l) s.activations.push_back(l + 1 == layers ? output : hidden);
    s.seed = seed;
    return s;
  }

  std::size_t layers() const { return widths.empty() ? 0 : widths.size() - 1; }
  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }

  void validate() const {
    require(widths.size() >= 2, "MlpSpec needs at least one layer");
    require(activations.size() == layers(), "MlpSpec needs one activation per layer");
    for (int w : widths) require(w > 0, "MlpSpec widths must be positive");
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Where each layer lives inside the flat parameter vector: weights are
/// row-major (out x in), followed by the bias (out).
struct LayerSlice {
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  int in = 0;
  int out = 0;
  friend bool operator==(const LayerSlice&, const LayerSlice&) = default;
};

struct ParamLayout {
  std::vector<LayerSlice> layers;
  std::size_t size = 0;

  static ParamLayout of(const MlpSpec& spec) {
    spec.validate();
    ParamLayout layout;
    std::size_t off = 0;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
      LayerSlice s;
      s.in = spec.widths[l];
      s.out = spec.widths[l + 1];
      s.weight_offset = off;
      off += static_cast<std::size_t>(s.in) * static_cast<std::size_t>(s.out);
      s.bias_offset = off;
      off += static_cast<std::size_t>(s.out);
      layout.layers.push_back(s);
    }
    layout.size = off;
    return layout;
  }

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

struct ParamVector {
  Vector values;
  ParamLayout layout;

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double weight(std::size_t layer, int row, int col) const {
    const auto& s = layout.layers.at(layer);
    return values[s.weight_offset + static_cast<std::size_t>(row) * s.in + col];
  }
  double& weight(std::size_t layer, int row, int col) {
    const auto& s = layout.layers.at(layer);
    return values[s.weight_offset + static_cast<std::size_t>(row) * s.in + col];
  }
  double& bias(std::size_t layer, int row) { return values[layout.layers.at(layer).bias_offset + row]; }
  double bias(std::size_t layer, int row) const { return values[layout.layers.at(layer).bias_offset + row]; }

  bool finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  static ParamVector zeros_like(const ParamVector& p) { return {Vector(p.size(), 0.0), p.layout}; }
};

inline ParamVector zero_params(const MlpSpec& spec) {
  auto layout = ParamLayout::of(spec);
  return {Vector(layout.size, 0.0), std::move(layout)};
}

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)) drawn from spec.seed; zero biases.
inline ParamVector init_params(const MlpSpec& spec) {
  ParamVector p = zero_params(spec);
  Rng rng(spec.seed);
  for (const auto& s : p.layout.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.in) * s.out; ++i)
      p.values[s.weight_offset + i] = rng.uniform(-limit, limit);
  }
  return p;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

/// Activations of every layer (post-activation), input included at index 0.
struct MlpTrace {
  std::vector<Vector> activations;
  const Vector& output() const { return activations.back(); }
};

inline MlpTrace mlp_trace(const MlpSpec& spec, const ParamVector& params, std::span<const double> x) {
  require(params.size() == params.layout.size && params.layout == ParamLayout::of(spec),
          "mlp: parameter layout does not match spec");
  require(static_cast<int>(x.size()) == spec.input_width(),
          "mlp: input length " + std::to_string(x.size()) + " != " + std::to_string(spec.input_width()));
  MlpTrace trace;
  trace.activations.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const auto& s = params.layout.layers[l];
    const Vector& in = trace.activations.back();
    Vector out(static_cast<std::size_t>(s.out));
    for (int o = 0; o < s.out; ++o) {
      double acc = params.values[s.bias_offset + o];
      const double* w = &params.values[s.weight_offset + static_cast<std::size_t>(o) * s.in];
      for (int i = 0; i < s.in; ++i) acc += w[i] * in[i];
      out[o] = spec.activations[l] == Activation::ReLU ? relu(acc) : acc;
    }
    trace.activations.push_back(std::move(out));
  }
  return trace;
}

inline Vector mlp_forward(const MlpSpec& spec, const ParamVector& params, std::span<const double> x) {
  return mlp_trace(spec, params, x).output();
}

struct MlpGradients {
  ParamVector params;  // dL/dtheta
  Vector input;        // dL/dx
};

/// Reverse-mode gradient of a scalar loss whose derivative w.r.t. the network
/// output is `upstream`. Accumulates into `into` when provided.
inline MlpGradients mlp_backward(const MlpSpec& spec, const ParamVector& params, const MlpTrace& trace,
                                 std::span<const double> upstream) {
  require(static_cast<int>(upstream.size()) == spec.output_width(), "mlp: upstream length mismatch");
  MlpGradients g{ParamVector::zeros_like(params), {}};
  Vector delta(upstream.begin(), upstream.end());
  for (std::size_t l = spec.layers(); l-- > 0;) {
    const auto& s = params.layout.layers[l];
    const Vector& out = trace.activations[l + 1];
    const Vector& in = trace.activations[l];
    if (spec.activations[l] == Activation::ReLU)
      for (int o = 0; o < s.out; ++o)
        if (out[o] <= 0.0) delta[o] = 0.0;
    Vector delta_in(static_cast<std::size_t>(s.in), 0.0);
    for (int o = 0; o < s.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      g.params.values[s.bias_offset + o] += d;
      const std::size_t row = s.weight_offset + static_cast<std::size_t>(o) * s.in;
      for (int i = 0; i < s.in; ++i) {
        g.params.values[row + i] += d * in[i];
        delta_in[i] += d * params.values[row + i];
      }
    }
    delta = std::move(delta_in);
  }
  g.input = std::move(delta);
  return g;
}

inline MlpGradients gradients(const MlpSpec& spec, const ParamVector& params, std::span<const double> x,
                              std::span<const double> upstream) {
  return mlp_backward(spec, params, mlp_trace(spec, params, x), upstream);
}

/// Max-subtracted softmax.
inline Vector softmax(std::span<const double> scores) {
  require(!scores.empty(), "softmax: empty input");
  const double mx = *std::max_element(scores.begin(), scores.end());
  Vector p(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

inline double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

/// d smooth_l1 / dx, always within [-1, 1].
inline double smooth_l1_grad(double x) { return std::clamp(x, -1.0, 1.0); }

/// Feature-wise linear modulation: beta (.) h + gamma.
inline Vector film(std::span<const double> h, std::span<const double> beta, std::span<const double> gamma) {
  require(h.size() == beta.size() && h.size() == gamma.size(), "film: length mismatch");
  Vector out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = beta[i] * h[i] + gamma[i];
  return out;
}

/// Gradient descent with heavy-ball momentum.
class MomentumSgd {
 public:
  MomentumSgd(double learning_rate, double momentum = 0.9) : lr_(learning_rate), momentum_(momentum) {}

  void step(Vector& params, std::span<const double> grad) {
    if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity_[i] = momentum_ * velocity_[i] - lr_ * grad[i];
      params[i] += velocity_[i];
    }
  }

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  void reset() { velocity_.clear(); }

 private:
  double lr_;
  double momentum_;
  Vector velocity_;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Rescales v so its L2 norm does not exceed max_norm; returns the original norm.
inline double clip_norm(std::span<double> v, double max_norm) {
  const double n = l2_norm(v);
  if (n > max_norm && n > 0.0)
    for (double& x : v) x *= max_norm / n;
  return n;
}

// Checkpoints: a tagged little-endian binary container of named MLPs and raw
// arrays. Doubles are stored bit-exactly.

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  require(in.gcount() == 8, "checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const auto n = get_u64(in);
  require(n < (1u << 20), "checkpoint string too long");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  require(static_cast<std::uint64_t>(in.gcount()) == n, "checkpoint truncated");
  return s;
}

}  // namespace detail

inline constexpr std::uint64_t kCheckpointMagic = 0x31544b43534753ULL;  // "GSSCKT1"

struct NamedMlp {
  std::string name;
  MlpSpec spec;
  ParamVector params;
};

struct NamedArray {
  std::string name;
  Vector values;
};

struct Checkpoint {
  std::vector<NamedMlp> mlps;
  std::vector<NamedArray> arrays;

  const NamedMlp& mlp(const std::string& name) const {
    for (const auto& m : mlps)
      if (m.name == name) return m;
    throw ValidationError("checkpoint has no network named " + name);
  }
  const Vector& array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a.values;
    throw ValidationError("checkpoint has no array named " + name);
  }
};

inline void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
  using namespace detail;
  put_u64(out, kCheckpointMagic);
  put_u64(out, ck.mlps.size());
  for (const auto& m : ck.mlps) {
    put_string(out, m.name);
    put_u64(out, m.spec.seed);
    put_u64(out, m.spec.widths.size());
    for (int w : m.spec.widths) put_u64(out, static_cast<std::uint64_t>(w));
    for (auto a : m.spec.activations) put_u64(out, static_cast<std::uint64_t>(a));
    // layout table: (weight_offset, bias_offset, in, out) per layer
    put_u64(out, m.params.layout.layers.size());
    for (const auto& s : m.params.layout.layers) {
      put_u64(out, s.weight_offset);
      put_u64(out, s.bias_offset);
      put_u64(out, static_cast<std::uint64_t>(s.in));
      put_u64(out, static_cast<std::uint64_t>(s.out));
    }
    put_u64(out, m.params.values.size());
    for (double v : m.params.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  put_u64(out, ck.arrays.size());
  for (const auto& a : ck.arrays) {
    put_string(out, a.name);
    put_u64(out, a.values.size());
    for (double v : a.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  using namespace detail;
  require(get_u64(in) == kCheckpointMagic, "not a gsstream checkpoint");
  Checkpoint ck;
  const auto n_mlps = get_u64(in);
  require(n_mlps < 4096, "checkpoint: implausible network count");
  for (std::uint64_t k = 0; k < n_mlps; ++k) {
    NamedMlp m;
    m.name = get_string(in);
    m.spec.seed = get_u64(in);
    const auto n_widths = get_u64(in);
    require(n_widths >= 2 && n_widths < 1024, "checkpoint: bad layer count");
    for (std::uint64_t i = 0; i < n_widths; ++i) m.spec.widths.push_back(static_cast<int>(get_u64(in)));
    for (std::uint64_t i = 0; i + 1 < n_widths; ++i) m.spec.activations.push_back(static_cast<Activation>(get_u64(in)));
    const auto expected = ParamLayout::of(m.spec);
    const auto n_layers = get_u64(in);
    require(n_layers == expected.layers.size(), "checkpoint: layout table mismatch");
    for (const auto& s : expected.layers) {
      LayerSlice r;
      r.weight_offset = get_u64(in);
      r.bias_offset = get_u64(in);
      r.in = static_cast<int>(get_u64(in));
      r.out = static_cast<int>(get_u64(in));
      require(r == s, "checkpoint: layout table mismatch");
    }
    const auto n_values = get_u64(in);
    require(n_values == expected.size, "checkpoint: parameter count mismatch");
    m.params.layout = expected;
    m.params.values.resize(n_values);
    for (auto& v : m.params.values) v = std::bit_cast<double>(get_u64(in));
    ck.mlps.push_back(std::move(m));
  }
  const auto n_arrays = get_u64(in);
  require(n_arrays < 4096, "checkpoint: implausible array count");
  for (std::uint64_t k = 0; k < n_arrays; ++k) {
    NamedArray a;
    a.name = get_string(in);
    const auto n = get_u64(in);
    require(n < (1ULL << 32), "checkpoint: implausible array length");
    a.values.resize(n);
    for (auto& v : a.values) v = std::bit_cast<double>(get_u64(in));
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write checkpoint: " + path);
  write_checkpoint(ck, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

}  // namespace gsstream::nn
