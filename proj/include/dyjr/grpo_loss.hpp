#pragma once

#include <span>
#include <vector>

#include "dyjr/policy.hpp"

namespace dyjr {

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;
  double sigma_floor = 1e-6;

  void validate() const;
};

// G responses to one query with their group statistics.
struct GroupRollout {
  Query query;
  std::vector<Trajectory> trajectories;
  std::vector<int> rewards;
  std::vector<double> advantages;
  int confidence = 0;  // number of rewards equal to 1
};

// (r_i - mean) / population_std; all zeros when std < sigma_floor.
// Throws ConfigError when fewer than two rewards are given.
std::vector<double> group_advantages(std::span<const int> rewards, double sigma_floor);

// Fills rewards, advantages and confidence from the trajectories, and stamps
// each trajectory with its advantage.
GroupRollout make_group(const Query& q, std::vector<Trajectory> trajectories, double sigma_floor);

struct SurrogateStats {
  double loss = 0.0;
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;
};

// Token-mean clipped surrogate over every token of every trajectory in the
// groups, with each trajectory's stored logprobs as the old policy. The
// gradient of the returned loss is added into grad.
SurrogateStats grpo_loss_and_grad(const PolicyParams& params, std::span<const GroupRollout> groups,
                                  const ClipConfig& clip, double temperature, Gradient& grad);

// Same objective on loose trajectories, each carrying its own advantage.
SurrogateStats surrogate_loss_and_grad(const PolicyParams& params,
                                       std::span<const Trajectory> trajectories,
                                       const ClipConfig& clip, double temperature, Gradient& grad);

// Loss only, no gradient. Used by finite-difference checks.
double grpo_loss(const PolicyParams& params, std::span<const GroupRollout> groups,
                 const ClipConfig& clip, double temperature);

}  // namespace dyjr
