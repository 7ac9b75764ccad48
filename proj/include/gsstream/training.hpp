#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "gsstream/policy.hpp"
#include "gsstream/simulator.hpp"
#include "gsstream/traces.hpp"

namespace gsstream {

/// Meta-learning defaults for session-length episodes. Each episode carries
/// horizon x visible-tile decision rows, so the inner step is smaller than the
/// library default tuned on single-tile tasks.
inline MetaConfig session_meta_config() {
  MetaConfig c;
  c.inner_lr = 0.003;
  return c;
}

inline std::shared_ptr<const std::vector<BandwidthTrace>> trace_set(TraceCategory c, int count, double duration_s,
                                                                    std::uint64_t seed) {
  require(count >= 1, "trace set needs at least one trace");
  auto out = std::make_shared<std::vector<BandwidthTrace>>();
  for (int i = 0; i < count; ++i)
    out->push_back(synth_bandwidth(c, duration_s, derive_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

/// One learner task per category: rollouts over `views` under that category's traces.
inline std::vector<Rollout> category_tasks(std::shared_ptr<const std::vector<GofView>> views,
                                           std::span<const TraceCategory> categories, int traces_per_task,
                                           double duration_s, std::uint64_t seed, const SessionConfig& cfg) {
  std::vector<Rollout> tasks;
  for (std::size_t i = 0; i < categories.size(); ++i)
    tasks.push_back(make_rollout(views, trace_set(categories[i], traces_per_task, duration_s, derive_seed(seed, i)),
                                 cfg));
  return tasks;
}

/// Runs cfg.iterations meta-updates; `curve` receives the mean query return per iteration.
inline PolicyNet meta_train(PolicyNet init, std::span<const Rollout> tasks, const MetaConfig& cfg, std::uint64_t seed,
                            std::vector<double>* curve = nullptr) {
  MetaLearner learner(std::move(init), cfg);
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto logs = learner.update(tasks, derive_seed(seed, static_cast<std::uint64_t>(it)));
    if (curve) {
      double q = 0.0;
      for (const auto& l : logs) q += l.query_return;
      curve->push_back(q / static_cast<double>(logs.size()));
    }
  }
  return learner.net();
}

struct AdaptationResult {
  double support_return = 0.0;
  double query_return = 0.0;
  int skipped_steps = 0;
};

/// Support rollouts from `init`, K_in inner steps, then query rollouts of the adapted policy.
inline AdaptationResult adapt_and_evaluate(const PolicyNet& init, const Rollout& task, const MetaConfig& cfg,
                                           std::uint64_t seed) {
  const auto support = rollouts(task, init, cfg.support_episodes, derive_seed(seed, 0));
  const auto adapted = inner_adapt(init, support, cfg);
  const auto query = rollouts(task, adapted.net, cfg.query_episodes, derive_seed(seed, 1));
  return {mean_return(support, cfg.discount), mean_return(query, cfg.discount), adapted.skipped_steps};
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
inline double sign_test_p(int wins, int n) {
  require(n >= 1 && wins >= 0 && wins <= n, "sign test: need 0 <= wins <= n, n >= 1");
  double p = 0.0;
  for (int k = wins; k <= n; ++k) p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                                                n * std::log(2.0));
  return std::min(1.0, p);
}

}  // namespace gsstream
