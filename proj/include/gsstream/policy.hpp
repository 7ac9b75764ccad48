#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gsstream/abr.hpp"
#include "gsstream/autodiff.hpp"
#include "gsstream/errors.hpp"
#include "gsstream/nn.hpp"
#include "gsstream/qoe.hpp"
#include "gsstream/rng.hpp"

namespace gsstream {

inline constexpr int kTileFeatures = 5 + 3 * kQualityLevels;
inline constexpr int kPolicyInput = kGlobalStateFeatures + kTileFeatures;
inline constexpr int kModes = 2;  // 0 reconstructed, 1 encoded

struct PolicyConfig {
  int hidden = 32;
  int embedding = 8;
  int encoder_hidden = 16;
  int weight_hidden = 16;
  QoEWeights initial_weights;  // weight-head output at initialization
  std::uint64_t seed = 0;

  void validate() const {
    require(hidden >= 1 && embedding >= 1 && encoder_hidden >= 1 && weight_hidden >= 1,
            "policy config: widths must be positive");
    const auto& w = initial_weights;
    require(w.lambda > 0 && w.mu > 0 && w.sigma_w > 0 && w.eta > 0, "policy config: initial QoE weights must be positive");
  }
};

enum PolicyPart { kTorso, kActionHead, kFilmBeta, kFilmGamma, kTaskEncoder, kWeightHead, kPolicyPartCount };

/// Parts updated by the policy gradient; the weight head is held fixed.
inline constexpr std::array<PolicyPart, 5> kTrainedPolicyParts{kTorso, kActionHead, kFilmBeta, kFilmGamma, kTaskEncoder};

inline const char* part_name(PolicyPart p) {
  switch (p) {
    case kTorso: return "policy.torso";
    case kActionHead: return "policy.action_head";
    case kFilmBeta: return "policy.film_beta";
    case kFilmGamma: return "policy.film_gamma";
    case kTaskEncoder: return "policy.task_encoder";
    case kWeightHead: return "policy.weight_head";
    case kPolicyPartCount: break;
  }
  return "?";
}

using PolicyGrads = std::array<nn::ParamVector, kPolicyPartCount>;

/// Shared torso over per-tile rows, FiLM-modulated by a task embedding, with
/// factorized mode (2) and level (5) heads and a QoE-weight head.
struct PolicyNet {
  PolicyConfig cfg;
  std::vector<nn::NamedMlp> parts;

  static PolicyNet make(const PolicyConfig& cfg) {
    cfg.validate();
    using nn::Activation;
    using nn::MlpSpec;
    PolicyNet net;
    net.cfg = cfg;
    auto seed = [&](PolicyPart p) { return derive_seed(cfg.seed, static_cast<std::uint64_t>(p)); };
    const int h = cfg.hidden, e = cfg.embedding;
    const std::array<MlpSpec, kPolicyPartCount> specs{
        MlpSpec::make({kPolicyInput, h, h}, Activation::ReLU, Activation::ReLU, seed(kTorso)),
        MlpSpec::make({h, kModes + kQualityLevels}, Activation::ReLU, Activation::None, seed(kActionHead)),
        MlpSpec::make({e, h}, Activation::ReLU, Activation::None, seed(kFilmBeta)),
        MlpSpec::make({e, h}, Activation::ReLU, Activation::None, seed(kFilmGamma)),
        MlpSpec::make({kTaskFeatures, cfg.encoder_hidden, e}, Activation::ReLU, Activation::None, seed(kTaskEncoder)),
        MlpSpec::make({e, cfg.weight_hidden, 4}, Activation::ReLU, Activation::None, seed(kWeightHead))};
    for (int p = 0; p < kPolicyPartCount; ++p) {
      const auto& spec = specs[static_cast<std::size_t>(p)];
      net.parts.push_back({part_name(static_cast<PolicyPart>(p)), spec, nn::init_params(spec)});
    }
    // FiLM starts near identity: unit scale, zero shift
    auto& beta = net.part(kFilmBeta).params;
    for (int o = 0; o < h; ++o) beta.bias(0, o) = 1.0;
    auto& wh = net.part(kWeightHead).params;
    const auto last = wh.layout.layers.size() - 1;
    const auto& w = cfg.initial_weights;
    const std::array<double, 4> target{w.lambda, w.mu, w.sigma_w, w.eta};
    for (int o = 0; o < 4; ++o) {
      for (int i = 0; i < cfg.weight_hidden; ++i) wh.weight(last, o, i) = 0.0;
      wh.bias(last, o) = nn::inverse_softplus(target[static_cast<std::size_t>(o)]);
    }
    return net;
  }

  nn::NamedMlp& part(PolicyPart p) { return parts.at(static_cast<std::size_t>(p)); }
  const nn::NamedMlp& part(PolicyPart p) const { return parts.at(static_cast<std::size_t>(p)); }

  PolicyGrads zero_gradients() const {
    PolicyGrads g;
    for (int p = 0; p < kPolicyPartCount; ++p) g[static_cast<std::size_t>(p)] = nn::ParamVector::zeros_like(parts[static_cast<std::size_t>(p)].params);
    return g;
  }

  bool finite() const {
    return std::all_of(parts.begin(), parts.end(), [](const auto& m) { return m.params.finite(); });
  }
};

/// Trained parameters concatenated in kTrainedPolicyParts order.
inline nn::Vector flatten(const PolicyNet& net) {
  nn::Vector v;
  for (auto p : kTrainedPolicyParts) {
    const auto& x = net.part(p).params.values;
    v.insert(v.end(), x.begin(), x.end());
  }
  return v;
}

inline nn::Vector flatten(const PolicyGrads& g) {
  nn::Vector v;
  for (auto p : kTrainedPolicyParts) {
    const auto& x = g[static_cast<std::size_t>(p)].values;
    v.insert(v.end(), x.begin(), x.end());
  }
  return v;
}

inline void unflatten(PolicyNet& net, std::span<const double> v) {
  std::size_t off = 0;
  for (auto p : kTrainedPolicyParts) {
    auto& x = net.part(p).params.values;
    require(off + x.size() <= v.size(), "policy: flat parameter vector too short");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), x.size(), x.begin());
    off += x.size();
  }
  require(off == v.size(), "policy: flat parameter vector too long");
}

/// Per-tile policy features: flags and influence terms, then per-level log
/// size ratios against the GoF budget (encoded, reconstructed) and PSNR / 100.
inline std::array<double, kTileFeatures> tile_features(const TileQoEInputs& t, double budget_bytes) {
  auto clip = [](double v) { return std::clamp(v, -1.0, 1.0); };
  std::array<double, kTileFeatures> f{};
  f[0] = t.visible ? 1.0 : 0.0;
  f[1] = clip(t.visibility);
  f[2] = clip(t.saliency);
  f[3] = clip(t.phi);
  f[4] = clip(t.psi);
  const double b = std::max(budget_bytes, 1.0);
  for (int r = 0; r < kQualityLevels; ++r) {
    const auto i = static_cast<std::size_t>(r);
    f[5 + i] = clip(std::log(std::max(t.size_encoded[i], 1.0) / b) / 8.0);
    f[5 + kQualityLevels + i] = clip(std::log(std::max(t.size_reconstructed[i], 1.0) / b) / 8.0);
    f[5 + 2 * kQualityLevels + i] = clip(t.psnr[i] / 100.0);
  }
  return f;
}

/// Policy inputs for one GoF: one row per visible tile, plus the task descriptor.
struct PolicyObservation {
  nn::Matrix rows;                          // visible tiles x kPolicyInput
  std::array<double, kTaskFeatures> task{};  // content and bandwidth descriptor
  std::vector<std::size_t> tile_index;      // GoF tile of each row
};

inline PolicyObservation observe(const SessionState& s, const GofProblem& p) {
  PolicyObservation o;
  o.task = s.task_features();
  const auto g = s.global_features();
  for (std::size_t k = 0; k < p.tiles.size(); ++k)
    if (p.tiles[k].visible) o.tile_index.push_back(k);
  o.rows.resize(static_cast<Eigen::Index>(o.tile_index.size()), kPolicyInput);
  for (std::size_t r = 0; r < o.tile_index.size(); ++r) {
    const auto tf = tile_features(p.tiles[o.tile_index[r]], p.budget_bytes());
    const auto row = static_cast<Eigen::Index>(r);
    for (int i = 0; i < kGlobalStateFeatures; ++i) o.rows(row, i) = g[static_cast<std::size_t>(i)];
    for (int i = 0; i < kTileFeatures; ++i) o.rows(row, kGlobalStateFeatures + i) = tf[static_cast<std::size_t>(i)];
  }
  return o;
}

/// Graph outputs of the action heads for a block of rows.
struct PolicyTape {
  nn::Var mode_logits;   // rows x 2
  nn::Var level_logits;  // rows x 5
  nn::Var embedding;     // rows x embedding
};

/// rows (n x kPolicyInput) and task (n x kTaskFeatures): each row carries its own task descriptor.
inline PolicyTape policy_tape(nn::Graph& g, const PolicyNet& net, PolicyGrads* grads, const nn::Matrix& rows,
                              const nn::Matrix& task) {
  require(rows.cols() == kPolicyInput && task.cols() == kTaskFeatures && rows.rows() == task.rows(),
          "policy: input shape mismatch");
  auto gp = [&](PolicyPart p) { return grads ? &(*grads)[static_cast<std::size_t>(p)] : nullptr; };
  auto mlp = [&](PolicyPart p, nn::Var x) { return g.mlp(net.part(p).spec, net.part(p).params, gp(p), x); };
  const nn::Var h = mlp(kTorso, g.constant(rows));
  const nn::Var z = mlp(kTaskEncoder, g.constant(task));
  const nn::Var modulated = g.add(g.mul(h, mlp(kFilmBeta, z)), mlp(kFilmGamma, z));
  const nn::Var out = mlp(kActionHead, modulated);
  return {g.cols(out, 0, kModes), g.cols(out, kModes, kQualityLevels), z};
}

/// Task descriptor rows broadcast over `n` rows.
inline nn::Matrix task_rows(const std::array<double, kTaskFeatures>& task, Eigen::Index n) {
  nn::Matrix t(n, kTaskFeatures);
  for (Eigen::Index r = 0; r < n; ++r)
    for (int i = 0; i < kTaskFeatures; ++i) t(r, i) = task[static_cast<std::size_t>(i)];
  return t;
}

/// Task embedding of a descriptor.
inline nn::Vector task_embedding(const PolicyNet& net, const std::array<double, kTaskFeatures>& task) {
  return nn::mlp_forward(net.part(kTaskEncoder).spec, net.part(kTaskEncoder).params, task);
}

/// QoE weights emitted for a task through softplus; gradients never reach this head.
inline QoEWeights policy_weights(const PolicyNet& net, const std::array<double, kTaskFeatures>& task) {
  const auto z = task_embedding(net, task);
  const auto w = nn::mlp_forward(net.part(kWeightHead).spec, net.part(kWeightHead).params, z);
  return {nn::softplus(w[0]), nn::softplus(w[1]), nn::softplus(w[2]), nn::softplus(w[3])};
}

/// Independent categorical distributions per visible tile.
struct PolicyOutput {
  nn::Matrix mode_probs;   // rows x 2
  nn::Matrix level_probs;  // rows x 5
  QoEWeights weights;
};

inline PolicyOutput policy_forward(const PolicyNet& net, const PolicyObservation& obs) {
  PolicyOutput out;
  out.weights = policy_weights(net, obs.task);
  if (obs.rows.rows() == 0) {
    out.mode_probs.resize(0, kModes);
    out.level_probs.resize(0, kQualityLevels);
    return out;
  }
  nn::Graph g;
  const auto tape = policy_tape(g, net, nullptr, obs.rows, task_rows(obs.task, obs.rows.rows()));
  out.mode_probs = g.value(g.row_softmax(tape.mode_logits));
  out.level_probs = g.value(g.row_softmax(tape.level_logits));
  return out;
}

/// Sampled per-row actions and their joint log-probability before projection.
struct SampledActions {
  std::vector<int> mode;
  std::vector<int> level;
  double log_prob = 0.0;
};

inline int sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // rounding left u beyond the last cumulative sum: take the last positive-mass entry
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return 0;
}

inline SampledActions sample_rows(const PolicyOutput& out, Rng& rng) {
  SampledActions s;
  for (Eigen::Index r = 0; r < out.mode_probs.rows(); ++r) {
    std::array<double, kModes> pm{};
    std::array<double, kQualityLevels> pl{};
    for (int i = 0; i < kModes; ++i) pm[static_cast<std::size_t>(i)] = out.mode_probs(r, i);
    for (int i = 0; i < kQualityLevels; ++i) pl[static_cast<std::size_t>(i)] = out.level_probs(r, i);
    const int m = sample_categorical(pm, rng);
    const int l = sample_categorical(pl, rng);
    s.mode.push_back(m);
    s.level.push_back(l);
    s.log_prob += std::log(out.mode_probs(r, m)) + std::log(out.level_probs(r, l));
  }
  return s;
}

/// Log-probability of given per-row actions.
inline double log_prob(const PolicyOutput& out, std::span<const int> mode, std::span<const int> level) {
  require(mode.size() == static_cast<std::size_t>(out.mode_probs.rows()) && level.size() == mode.size(),
          "log_prob: action count mismatch");
  double lp = 0.0;
  for (std::size_t r = 0; r < mode.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    lp += std::log(out.mode_probs(row, mode[r])) + std::log(out.level_probs(row, level[r]));
  }
  return lp;
}

struct PolicyDecision {
  Decision decision;      // feasible, after projection
  Decision proposal;      // sampled, before projection
  SampledActions actions;  // per visible row, log-probability of the proposal
};

/// Samples per-tile actions and projects them onto the budget.
inline PolicyDecision sample_action(const PolicyOutput& out, const PolicyObservation& obs, const GofProblem& p,
                                    Rng& rng) {
  PolicyDecision d;
  d.actions = sample_rows(out, rng);
  d.proposal = empty_decision(p.tiles.size());
  for (std::size_t r = 0; r < obs.tile_index.size(); ++r)
    d.proposal.tiles[obs.tile_index[r]] = TileAction{true, d.actions.mode[r] == 1, d.actions.level[r]};
  d.decision = project_feasible(p, d.proposal);
  return d;
}

/// One decision step of an episode as the learner sees it.
struct StepRecord {
  nn::Matrix rows;
  std::array<double, kTaskFeatures> task{};
  std::vector<int> mode;
  std::vector<int> level;
  double reward = 0.0;
};

struct Episode {
  std::vector<StepRecord> steps;
  double mean_qoe = 0.0;  // config-weight QoE, for evaluation
  int stalls = 0;
};

inline double discounted_return(std::span<const double> rewards, double gamma) {
  require(gamma >= 0.0 && gamma <= 1.0, "discounted_return: discount must lie in [0, 1]");
  double total = 0.0, w = 1.0;
  for (double r : rewards) {
    total += w * r;
    w *= gamma;
  }
  return total;
}

inline double episode_return(const Episode& e, double gamma) {
  std::vector<double> r;
  for (const auto& s : e.steps) r.push_back(s.reward);
  return discounted_return(r, gamma);
}

struct MetaConfig {
  int inner_steps = 5;       // K_in
  double inner_lr = 0.1;     // alpha
  double outer_lr = 0.01;
  double outer_momentum = 0.9;
  double discount = 0.95;    // gamma_d
  double kl_coef = 0.1;      // xi
  int horizon = 20;          // H, GoFs per episode
  int support_episodes = 4;
  int query_episodes = 4;
  int iterations = 30;
  double clip = 5.0;

  void validate() const {
    require(inner_steps >= 0, "meta config: inner steps must be non-negative");
    require(inner_lr > 0 && outer_lr > 0, "meta config: learning rates must be positive");
    require(discount > 0.0 && discount <= 1.0, "meta config: discount must lie in (0, 1]");
    require(kl_coef >= 0.0, "meta config: KL coefficient must be non-negative");
    require(horizon >= 1 && support_episodes >= 1 && query_episodes >= 1, "meta config: empty rollout sets");
    require(iterations >= 0 && clip > 0, "meta config: bad schedule");
  }
};

namespace detail {

/// All decision rows of a set of episodes with per-row REINFORCE weights.
struct RolloutBatch {
  nn::Matrix rows;
  nn::Matrix task;
  std::vector<std::pair<int, int>> mode_at, level_at;
  nn::Matrix coef;  // rows x 1: -advantage / episodes
};

inline RolloutBatch make_batch(std::span<const Episode> episodes, double gamma) {
  RolloutBatch b;
  std::size_t horizon = 0, n_rows = 0;
  for (const auto& e : episodes) {
    horizon = std::max(horizon, e.steps.size());
    for (const auto& s : e.steps) n_rows += static_cast<std::size_t>(s.rows.rows());
  }
  // returns-to-go, then a per-timestep mean baseline
  std::vector<std::vector<double>> ret(episodes.size());
  std::vector<double> base(horizon, 0.0), count(horizon, 0.0);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& st = episodes[i].steps;
    ret[i].assign(st.size(), 0.0);
    double g = 0.0;
    for (std::size_t t = st.size(); t-- > 0;) ret[i][t] = g = st[t].reward + gamma * g;
    for (std::size_t t = 0; t < st.size(); ++t) base[t] += ret[i][t], count[t] += 1.0;
  }
  for (std::size_t t = 0; t < horizon; ++t) base[t] /= count[t];
  std::vector<double> adv;
  for (std::size_t i = 0; i < episodes.size(); ++i)
    for (std::size_t t = 0; t < ret[i].size(); ++t) adv.push_back(ret[i][t] - base[t]);
  double mean = 0.0, var = 0.0;
  for (double a : adv) mean += a;
  mean /= std::max<std::size_t>(adv.size(), 1);
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= std::max<std::size_t>(adv.size(), 1);
  const double scale = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;

  b.rows.resize(static_cast<Eigen::Index>(n_rows), kPolicyInput);
  b.task.resize(static_cast<Eigen::Index>(n_rows), kTaskFeatures);
  b.coef.resize(static_cast<Eigen::Index>(n_rows), 1);
  Eigen::Index r = 0;
  std::size_t a = 0;
  const double inv_eps = 1.0 / static_cast<double>(std::max<std::size_t>(episodes.size(), 1));
  for (const auto& e : episodes)
    for (const auto& s : e.steps) {
      const double c = -adv[a++] * scale * inv_eps;
      for (Eigen::Index k = 0; k < s.rows.rows(); ++k, ++r) {
        b.rows.row(r) = s.rows.row(k);
        for (int i = 0; i < kTaskFeatures; ++i) b.task(r, i) = s.task[static_cast<std::size_t>(i)];
        b.mode_at.emplace_back(static_cast<int>(r), s.mode[static_cast<std::size_t>(k)]);
        b.level_at.emplace_back(static_cast<int>(r), s.level[static_cast<std::size_t>(k)]);
        b.coef(r, 0) = c;
      }
    }
  return b;
}

}  // namespace detail

/// Reference distributions on a batch, treated as constants in the KL term.
struct ReferenceLogits {
  nn::Matrix log_mode;
  nn::Matrix log_level;
};

inline ReferenceLogits reference_logits(const PolicyNet& net, const detail::RolloutBatch& b) {
  nn::Graph g;
  const auto t = policy_tape(g, net, nullptr, b.rows, b.task);
  return {g.value(g.row_log_softmax(t.mode_logits)), g.value(g.row_log_softmax(t.level_logits))};
}

struct ObjectiveValue {
  double total = 0.0;
  double pg = 0.0;
  double kl = 0.0;
};

/// (PG + xi * KL(pi || pi_ref)) / (1 + xi) on a rollout batch; accumulates the
/// gradient into `grads` when given. `ref` may be null when xi is zero.
inline ObjectiveValue policy_objective(const PolicyNet& net, const detail::RolloutBatch& b, const ReferenceLogits* ref,
                                       double xi, PolicyGrads* grads) {
  ObjectiveValue v;
  if (b.rows.rows() == 0) return v;
  nn::Graph g;
  const auto t = policy_tape(g, net, grads, b.rows, b.task);
  const nn::Var lm = g.row_log_softmax(t.mode_logits);
  const nn::Var ll = g.row_log_softmax(t.level_logits);
  const nn::Var logp = g.add(g.pick(lm, b.mode_at), g.pick(ll, b.level_at));
  const nn::Var pg = g.sum(g.mul_const(logp, b.coef));
  nn::Var loss = pg;
  if (xi > 0.0) {
    require(ref != nullptr, "policy objective: KL term needs reference logits");
    auto kl_part = [&](nn::Var logq, const nn::Matrix& logr) {
      const nn::Var q = g.exp(logq);
      return g.sum(g.mul(q, g.sub(logq, g.constant(logr))));
    };
    const nn::Var kl =
        g.affine(g.add(kl_part(lm, ref->log_mode), kl_part(ll, ref->log_level)), 1.0 / static_cast<double>(b.rows.rows()), 0.0);
    v.kl = g.scalar(kl);
    loss = g.affine(g.add(pg, g.affine(kl, xi, 0.0)), 1.0 / (1.0 + xi), 0.0);
  }
  v.pg = g.scalar(pg);
  v.total = g.scalar(loss);
  if (grads) g.backward(loss);
  return v;
}

/// Mean KL(pi_a || pi_b) over the decision rows of a set of episodes.
inline double policy_kl(const PolicyNet& a, const PolicyNet& b, std::span<const Episode> episodes) {
  const auto batch = detail::make_batch(episodes, 1.0);
  if (batch.rows.rows() == 0) return 0.0;
  const auto ref = reference_logits(b, batch);
  return policy_objective(a, batch, &ref, 1.0, nullptr).kl;
}

struct AdaptResult {
  PolicyNet net;
  int skipped_steps = 0;
  std::vector<ObjectiveValue> objective;  // before each step
};

/// K_in gradient steps of the regularized policy-gradient objective on the
/// support episodes, starting from `net` and regularized towards it.
inline AdaptResult inner_adapt(const PolicyNet& net, std::span<const Episode> support, const MetaConfig& cfg) {
  cfg.validate();
  AdaptResult res{net, 0, {}};
  const auto batch = detail::make_batch(support, cfg.discount);
  const auto ref = reference_logits(net, batch);
  for (int k = 0; k < cfg.inner_steps; ++k) {
    auto grads = res.net.zero_gradients();
    res.objective.push_back(policy_objective(res.net, batch, &ref, cfg.kl_coef, &grads));
    const auto flat = flatten(grads);
    if (!std::all_of(flat.begin(), flat.end(), [](double x) { return std::isfinite(x); })) {
      ++res.skipped_steps;
      continue;
    }
    auto theta = flatten(res.net);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.inner_lr * flat[i];
    unflatten(res.net, theta);
  }
  return res;
}

/// Rolls out one episode of a task with the given policy and seed.
using Rollout = std::function<Episode(const PolicyNet&, std::uint64_t)>;

struct TaskLog {
  double support_return = 0.0;
  double query_return = 0.0;
  double kl = 0.0;
  int skipped_steps = 0;
};

inline double mean_return(std::span<const Episode> eps, double gamma) {
  double s = 0.0;
  for (const auto& e : eps) s += episode_return(e, gamma);
  return eps.empty() ? 0.0 : s / static_cast<double>(eps.size());
}

inline std::vector<Episode> rollouts(const Rollout& task, const PolicyNet& net, int count, std::uint64_t seed) {
  std::vector<Episode> out;
  for (int i = 0; i < count; ++i) out.push_back(task(net, derive_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

/// First-order meta-learner: the outer gradient is the query policy gradient
/// taken at each task's adapted parameters and applied to the shared init.
class MetaLearner {
 public:
  MetaLearner(PolicyNet net, MetaConfig cfg) : net_(std::move(net)), cfg_(cfg), opt_(cfg.outer_lr, cfg.outer_momentum) {
    cfg_.validate();
  }

  const PolicyNet& net() const { return net_; }
  const MetaConfig& config() const { return cfg_; }

  std::vector<TaskLog> update(std::span<const Rollout> tasks, std::uint64_t seed) {
    require(!tasks.empty(), "meta update: no tasks");
    std::vector<TaskLog> logs;
    nn::Vector outer(flatten(net_).size(), 0.0);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto s = derive_seed(seed, i);
      TaskLog log;
      const auto support = rollouts(tasks[i], net_, cfg_.support_episodes, derive_seed(s, 0));
      auto adapted = inner_adapt(net_, support, cfg_);
      const auto query = rollouts(tasks[i], adapted.net, cfg_.query_episodes, derive_seed(s, 1));
      auto grads = adapted.net.zero_gradients();
      policy_objective(adapted.net, detail::make_batch(query, cfg_.discount), nullptr, 0.0, &grads);
      const auto g = flatten(grads);
      if (std::all_of(g.begin(), g.end(), [](double x) { return std::isfinite(x); })) {
        for (std::size_t k = 0; k < g.size(); ++k) outer[k] += g[k] / static_cast<double>(tasks.size());
      } else {
        ++log.skipped_steps;
      }
      log.support_return = mean_return(support, cfg_.discount);
      log.query_return = mean_return(query, cfg_.discount);
      log.kl = policy_kl(adapted.net, net_, support);
      log.skipped_steps += adapted.skipped_steps;
      logs.push_back(log);
    }
    nn::clip_norm(outer, cfg_.clip);
    auto theta = flatten(net_);
    opt_.step(theta, outer);
    unflatten(net_, theta);
    return logs;
  }

 private:
  PolicyNet net_;
  MetaConfig cfg_;
  nn::MomentumSgd opt_;
};

inline nn::Checkpoint policy_checkpoint(const PolicyNet& net) {
  nn::Checkpoint ck;
  ck.mlps = net.parts;
  const auto& c = net.cfg;
  const auto& w = c.initial_weights;
  ck.arrays.push_back({"policy.config",
                       {double(c.hidden), double(c.embedding), double(c.encoder_hidden), double(c.weight_hidden), w.lambda,
                        w.mu, w.sigma_w, w.eta, std::bit_cast<double>(c.seed)}});
  return ck;
}

inline PolicyNet policy_from_checkpoint(const nn::Checkpoint& ck) {
  const auto& a = ck.array("policy.config");
  require(a.size() == 9, "policy checkpoint: bad config record");
  PolicyConfig c;
  c.hidden = static_cast<int>(a[0]);
  c.embedding = static_cast<int>(a[1]);
  c.encoder_hidden = static_cast<int>(a[2]);
  c.weight_hidden = static_cast<int>(a[3]);
  c.initial_weights = {a[4], a[5], a[6], a[7]};
  c.seed = std::bit_cast<std::uint64_t>(a[8]);
  PolicyNet net = PolicyNet::make(c);
  for (auto& p : net.parts) {
    const auto& m = ck.mlp(p.name);
    require(m.spec.widths == p.spec.widths, "policy checkpoint: shape mismatch in " + p.name);
    p.params = m.params;
  }
  return net;
}

}  // namespace gsstream
