#include "dyjr/replay_buffer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "dyjr/errors.hpp"

namespace dyjr {

void FillSchedule::validate() const {
  if (warmup_steps < 0) throw ConfigError("buffer.warmup_steps must be >= 0");
  if (!(eta_steady > 0.0 && eta_steady <= eta_warmup && eta_warmup <= 1.0))
    throw ConfigError("buffer fill rates must satisfy 0 < eta_steady <= eta_warmup <= 1");
}

std::size_t target_fill_count(const FillSchedule& sched, std::int64_t step,
                              std::size_t rollouts_per_step) {
  if (rollouts_per_step == 0) throw InputError("target_fill_count: rollouts_per_step must be >= 1");
  // The slack absorbs representation error in products like 0.05 * 4000.
  const double raw = sched.eta(step) * static_cast<double>(rollouts_per_step);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

std::size_t ReplayBuffer::evict_stale(std::int64_t step) {
  const auto before = entries_.size();
  std::erase_if(entries_, [&](const Trajectory& t) { return step - t.birth_step > max_age_; });
  return before - entries_.size();
}

AdmitResult ReplayBuffer::admit(std::span<const GroupRollout> rollouts, std::size_t quota,
                                Rng& rng) {
  AdmitResult result;
  result.quota = quota;
  int max_conf = 0;
  for (const auto& g : rollouts)
    max_conf = std::max(max_conf, static_cast<int>(g.trajectories.size()));

  std::size_t remaining = quota;
  for (int k = max_conf; k >= 1 && remaining > 0; --k) {
    std::vector<const Trajectory*> stratum;
    for (const auto& g : rollouts) {
      if (g.confidence != k) continue;
      for (const auto& t : g.trajectories)
        if (t.reward == 1) stratum.push_back(&t);
    }
    if (stratum.empty()) continue;

    if (stratum.size() <= remaining) {
      rng.shuffle(std::span(stratum));
      for (const auto* t : stratum) entries_.push_back(*t);
      remaining -= stratum.size();
      result.admitted += stratum.size();
    } else {
      for (std::size_t i : rng.choose(stratum.size(), remaining)) entries_.push_back(*stratum[i]);
      result.admitted += remaining;
      result.cut_stratum = k;
      remaining = 0;
    }
  }
  return result;
}

std::size_t ReplayBuffer::admit_per_query(std::span<const GroupRollout> rollouts,
                                          std::size_t per_query_cap) {
  std::unordered_map<std::int64_t, std::size_t> held;
  for (const auto& t : entries_) ++held[t.query.query_id];
  std::size_t admitted = 0;
  for (const auto& g : rollouts) {
    for (const auto& t : g.trajectories) {
      if (t.reward != 1) continue;
      auto& n = held[t.query.query_id];
      if (n >= per_query_cap) continue;
      entries_.push_back(t);
      ++n;
      ++admitted;
    }
  }
  return admitted;
}

std::vector<Trajectory> ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (entries_.size() <= batch_size) return {entries_.begin(), entries_.end()};
  std::vector<Trajectory> out;
  out.reserve(batch_size);
  for (std::size_t i : rng.choose(entries_.size(), batch_size)) out.push_back(entries_[i]);
  return out;
}

}  // namespace dyjr
