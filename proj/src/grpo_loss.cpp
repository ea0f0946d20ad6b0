#include "dyjr/grpo_loss.hpp"

#include <algorithm>
#include <cmath>

#include "dyjr/errors.hpp"

namespace dyjr {

void ClipConfig::validate() const {
  if (!(eps_low > 0.0 && eps_low < 1.0)) throw ConfigError("clip.eps_low must be in (0, 1)");
  if (!(eps_high > 0.0 && eps_high < 1.0)) throw ConfigError("clip.eps_high must be in (0, 1)");
  if (!(sigma_floor > 0.0)) throw ConfigError("clip.sigma_floor must be > 0");
}

std::vector<double> group_advantages(std::span<const int> rewards, double sigma_floor) {
  if (rewards.size() < 2) throw ConfigError("group_advantages: group size must be >= 2");
  const auto n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (int r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (int r : rewards) var += (r - mean) * (r - mean);
  const double sigma = std::sqrt(var / n);

  std::vector<double> adv(rewards.size(), 0.0);
  if (sigma < sigma_floor) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sigma;
  return adv;
}

GroupRollout make_group(const Query& q, std::vector<Trajectory> trajectories, double sigma_floor) {
  GroupRollout g;
  g.query = q;
  g.rewards.reserve(trajectories.size());
  for (const auto& t : trajectories) g.rewards.push_back(t.reward);
  g.advantages = group_advantages(g.rewards, sigma_floor);
  g.confidence = static_cast<int>(std::count(g.rewards.begin(), g.rewards.end(), 1));
  for (std::size_t i = 0; i < trajectories.size(); ++i)
    trajectories[i].advantage = g.advantages[i];
  g.trajectories = std::move(trajectories);
  return g;
}

namespace {

struct Accumulator {
  Accumulator(const PolicyParams& p, const ClipConfig& c, double temp, Gradient* g)
      : params(p), clip(c), temperature(temp), grad(g) {}

  const PolicyParams& params;
  const ClipConfig& clip;
  double temperature;
  Gradient* grad;  // null: loss only

  double term_sum = 0.0;
  std::size_t clipped = 0;
  // Unscaled per-token gradient weights -A*rho, rescaled once the token
  // count is known.
  std::vector<const Trajectory*> sources;
  std::vector<std::vector<double>> weights;

  void add(const Trajectory& traj, double advantage) {
    const auto lp = sequence_logprobs(params, traj.query, traj.tokens, temperature);
    std::vector<double> w(lp.size(), 0.0);
    for (std::size_t j = 0; j < lp.size(); ++j) {
      const double rho = std::exp(lp[j] - traj.logprobs_old[j]);
      if (std::isnan(rho))
        throw NumericError("NaN importance ratio (corrupt stored logprobs?) for query " +
                           std::to_string(traj.query.query_id));
      const double unclipped = rho * advantage;
      const double clipped_val =
          std::clamp(rho, 1.0 - clip.eps_low, 1.0 + clip.eps_high) * advantage;
      if (unclipped <= clipped_val) {
        term_sum += unclipped;
        w[j] = -advantage * rho;
      } else {
        term_sum += clipped_val;
        ++clipped;
      }
    }
    if (grad != nullptr) {
      sources.push_back(&traj);
      weights.push_back(std::move(w));
    }
  }

  SurrogateStats finish(std::size_t tokens) {
    SurrogateStats s;
    s.tokens = tokens;
    s.clipped_tokens = clipped;
    if (tokens == 0) return s;
    const double inv = 1.0 / static_cast<double>(tokens);
    s.loss = -term_sum * inv;
    if (grad != nullptr) {
      for (std::size_t i = 0; i < sources.size(); ++i) {
        for (double& w : weights[i]) w *= inv;
        accumulate_weighted_grad(params, sources[i]->query, sources[i]->tokens, weights[i],
                                 temperature, *grad);
      }
    }
    return s;
  }
};

SurrogateStats run_groups(const PolicyParams& params, std::span<const GroupRollout> groups,
                          const ClipConfig& clip, double temperature, Gradient* grad) {
  Accumulator acc{params, clip, temperature, grad};
  std::size_t tokens = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      acc.add(g.trajectories[i], g.advantages[i]);
      tokens += g.trajectories[i].tokens.size();
    }
  }
  return acc.finish(tokens);
}

}  // namespace

SurrogateStats grpo_loss_and_grad(const PolicyParams& params, std::span<const GroupRollout> groups,
                                  const ClipConfig& clip, double temperature, Gradient& grad) {
  return run_groups(params, groups, clip, temperature, &grad);
}

SurrogateStats surrogate_loss_and_grad(const PolicyParams& params,
                                       std::span<const Trajectory> trajectories,
                                       const ClipConfig& clip, double temperature,
                                       Gradient& grad) {
  Accumulator acc{params, clip, temperature, &grad};
  std::size_t tokens = 0;
  for (const auto& t : trajectories) {
    acc.add(t, t.advantage);
    tokens += t.tokens.size();
  }
  return acc.finish(tokens);
}

double grpo_loss(const PolicyParams& params, std::span<const GroupRollout> groups,
                 const ClipConfig& clip, double temperature) {
  return run_groups(params, groups, clip, temperature, nullptr).loss;
}

}  // namespace dyjr
