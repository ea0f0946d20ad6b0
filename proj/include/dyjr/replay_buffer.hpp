#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "dyjr/grpo_loss.hpp"
#include "dyjr/policy.hpp"
#include "dyjr/rng.hpp"

namespace dyjr {

// Target fill rate as a fraction of a step's rollouts: eta_warmup through
// step warmup_steps, eta_steady afterwards.
struct FillSchedule {
  std::int64_t warmup_steps = 20;
  double eta_warmup = 0.20;
  double eta_steady = 0.05;

  void validate() const;
  double eta(std::int64_t step) const { return step <= warmup_steps ? eta_warmup : eta_steady; }
};

// ceil(eta(step) * rollouts_per_step).
std::size_t target_fill_count(const FillSchedule& sched, std::int64_t step,
                              std::size_t rollouts_per_step);

struct AdmitResult {
  std::size_t admitted = 0;
  std::size_t quota = 0;
  // Confidence level of the stratum that was cut by the quota, 0 if none.
  int cut_stratum = 0;
};

// FIFO store of rewarded trajectories bounded by a maximum age in steps.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  explicit ReplayBuffer(std::int64_t max_age) : max_age_(max_age) {}

  std::int64_t max_age() const noexcept { return max_age_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::deque<Trajectory>& entries() const noexcept { return entries_; }

  // Drops every entry with step - birth_step > max_age. Returns the count.
  std::size_t evict_stale(std::int64_t step);

  // Confidence-stratified descending admission: sweeps confidence k from G
  // down to 1 taking all rewarded trajectories of groups with C = k, until
  // the quota would be exceeded; the cut stratum contributes a uniform
  // random subset that fills the quota exactly.
  AdmitResult admit(std::span<const GroupRollout> rollouts, std::size_t quota, Rng& rng);

  // Appends each rewarded trajectory whose query id holds fewer than
  // per_query_cap entries. Never evicts.
  std::size_t admit_per_query(std::span<const GroupRollout> rollouts, std::size_t per_query_cap);

  // Uniform without replacement; the whole buffer when it holds fewer than
  // batch_size entries.
  std::vector<Trajectory> sample(std::size_t batch_size, Rng& rng) const;

  void restore(std::deque<Trajectory> entries) { entries_ = std::move(entries); }

 private:
  std::int64_t max_age_ = 8;
  std::deque<Trajectory> entries_;
};

}  // namespace dyjr
