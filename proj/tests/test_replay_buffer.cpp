#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "dyjr/errors.hpp"
#include "dyjr/replay_buffer.hpp"
#include "test_util.hpp"

using namespace dyjr;

namespace {

// Trajectories are tagged through tokens[0] so tests can tell them apart.
Trajectory tagged(int tag, int reward, std::int64_t birth, std::int64_t query_id = 0) {
  Trajectory t;
  t.query.query_id = query_id;
  t.tokens = {tag};
  t.reward = reward;
  t.birth_step = birth;
  return t;
}

GroupRollout group_with(const std::vector<int>& rewards, int& next_tag, std::int64_t birth,
                        std::int64_t query_id = 0) {
  std::vector<Trajectory> trajs;
  for (int r : rewards) trajs.push_back(tagged(next_tag++, r, birth, query_id));
  Query q;
  q.query_id = query_id;
  return make_group(q, std::move(trajs), 1e-6);
}

std::vector<int> rewards_with(int group, int confidence) {
  std::vector<int> r(static_cast<std::size_t>(group), 0);
  std::fill(r.begin(), r.begin() + confidence, 1);
  return r;
}

}  // namespace

TEST_CASE("eviction removes entries strictly older than the max age") {
  ReplayBuffer buf(8);
  std::deque<Trajectory> entries;
  for (int b = 0; b <= 10; ++b) entries.push_back(tagged(b, 1, b));
  buf.restore(entries);
  CHECK(buf.evict_stale(12) == 4);  // births 0..3 have age > 8
  REQUIRE(buf.size() == 7);
  CHECK(buf.entries().front().birth_step == 4);
  for (std::size_t i = 1; i < buf.size(); ++i)
    CHECK(buf.entries()[i - 1].birth_step < buf.entries()[i].birth_step);
  CHECK(buf.evict_stale(12) == 0);
}

TEST_CASE("fill schedule counts and switch") {
  const FillSchedule s;
  CHECK(target_fill_count(s, 1, 4096) == 820);
  CHECK(target_fill_count(s, 20, 4096) == 820);
  CHECK(target_fill_count(s, 21, 4096) == 205);
  CHECK(target_fill_count(s, 21, 4000) == 200);
  CHECK(target_fill_count(s, 21, 1) == 1);
  CHECK_THROWS_AS(target_fill_count(s, 1, 0), InputError);
  FillSchedule bad;
  bad.eta_steady = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("admission takes strata from high confidence down and cuts the last one") {
  int tag = 0;
  std::vector<GroupRollout> groups;
  groups.push_back(group_with(rewards_with(8, 2), tag, 1));  // tags 0..7
  groups.push_back(group_with(rewards_with(8, 3), tag, 1));  // tags 8..15
  groups.push_back(group_with(rewards_with(8, 2), tag, 1));  // tags 16..23
  groups.push_back(group_with(rewards_with(8, 0), tag, 1));
  groups.push_back(group_with(rewards_with(8, 2), tag, 1));  // tags 32..39
  const std::set<int> c3{8, 9, 10};
  const std::set<int> c2{0, 1, 16, 17, 32, 33};

  ReplayBuffer buf(8);
  Rng rng(1);
  const auto res = buf.admit(groups, 4, rng);
  CHECK(res.admitted == 4);
  CHECK(res.cut_stratum == 2);
  REQUIRE(buf.size() == 4);
  std::set<int> got;
  for (const auto& t : buf.entries()) {
    CHECK(t.reward == 1);
    got.insert(t.tokens[0]);
  }
  for (int t : c3) CHECK(got.count(t) == 1);
  int from_c2 = 0;
  for (int t : got) from_c2 += static_cast<int>(c2.count(t));
  CHECK(from_c2 == 1);
}

TEST_CASE("admission: the cut stratum is sampled uniformly") {
  int tag = 0;
  std::vector<GroupRollout> groups;
  groups.push_back(group_with(rewards_with(8, 3), tag, 1));
  groups.push_back(group_with(rewards_with(8, 2), tag, 1));
  groups.push_back(group_with(rewards_with(8, 2), tag, 1));
  groups.push_back(group_with(rewards_with(8, 2), tag, 1));
  std::map<int, int> counts;
  const int trials = 6000;
  for (int i = 0; i < trials; ++i) {
    ReplayBuffer buf(8);
    Rng rng(static_cast<std::uint64_t>(i) + 1);
    buf.admit(groups, 4, rng);
    for (const auto& t : buf.entries())
      if (t.tokens[0] >= 8) ++counts[t.tokens[0]];
  }
  REQUIRE(counts.size() == 6);
  for (const auto& [t, n] : counts) CHECK(std::abs(n / static_cast<double>(trials) - 1.0 / 6.0) < 0.02);
}

TEST_CASE("admission edge cases") {
  int tag = 0;
  std::vector<GroupRollout> none{group_with(rewards_with(4, 0), tag, 1),
                                 group_with(rewards_with(4, 0), tag, 1)};
  ReplayBuffer buf(8);
  Rng rng(2);
  CHECK(buf.admit(none, 10, rng).admitted == 0);
  CHECK(buf.empty());

  std::vector<GroupRollout> some{group_with(rewards_with(4, 4), tag, 1),
                                 group_with(rewards_with(4, 1), tag, 1)};
  auto res = buf.admit(some, 0, rng);
  CHECK(res.admitted == 0);
  res = buf.admit(some, 100, rng);
  CHECK(res.admitted == 5);
  CHECK(res.cut_stratum == 0);
  for (const auto& t : buf.entries()) CHECK(t.reward == 1);
}

TEST_CASE("buffer laws hold over many randomized steps") {
  Rng rng(99);
  const FillSchedule sched;
  ReplayBuffer buf(3);
  const std::size_t group = 4, queries = 10;
  int tag = 0;
  for (std::int64_t step = 1; step <= 3000; ++step) {
    buf.evict_stale(step);
    for (const auto& t : buf.entries()) CHECK(step - t.birth_step <= 3);
    std::vector<GroupRollout> groups;
    std::size_t correct = 0;
    for (std::size_t q = 0; q < queries; ++q) {
      std::vector<int> r(group);
      for (int& x : r) x = rng.uniform01() < 0.4 ? 1 : 0;
      correct += static_cast<std::size_t>(std::count(r.begin(), r.end(), 1));
      groups.push_back(group_with(r, tag, step));
    }
    const auto before = buf.size();
    const auto quota = target_fill_count(sched, step, group * queries);
    const auto res = buf.admit(groups, quota, rng);
    CHECK(res.admitted == std::min(quota, correct));
    CHECK(buf.size() == before + res.admitted);
    for (std::size_t i = before; i < buf.size(); ++i) CHECK(buf.entries()[i].birth_step == step);
  }
}

TEST_CASE("sample is uniform over subsets") {
  ReplayBuffer buf(8);
  std::deque<Trajectory> entries;
  for (int i = 0; i < 10; ++i) entries.push_back(tagged(i, 1, 0));
  buf.restore(entries);
  std::map<unsigned, int> counts;
  Rng rng(7);
  const int draws = 21000;
  for (int d = 0; d < draws; ++d) {
    const auto s = buf.sample(4, rng);
    REQUIRE(s.size() == 4);
    unsigned mask = 0;
    for (const auto& t : s) mask |= 1u << t.tokens[0];
    CHECK(__builtin_popcount(mask) == 4);
    ++counts[mask];
  }
  CHECK(counts.size() == 210);
  const double expected = draws / 210.0;
  double chi2 = 0.0;
  for (const auto& [m, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  // 0.999 quantile of chi-square with 209 degrees of freedom.
  CHECK(chi2 < 277.9);
}

TEST_CASE("sample on a small or empty buffer returns everything") {
  ReplayBuffer buf(8);
  Rng rng(1);
  CHECK(buf.sample(4, rng).empty());
  std::deque<Trajectory> entries{tagged(0, 1, 0), tagged(1, 1, 0)};
  buf.restore(entries);
  CHECK(buf.sample(4, rng).size() == 2);
  CHECK(buf.sample(2, rng).size() == 2);
}

TEST_CASE("per-query admission respects the cap and never evicts") {
  int tag = 0;
  ReplayBuffer buf(1);
  std::vector<GroupRollout> groups{group_with(rewards_with(4, 3), tag, 1, 5),
                                   group_with(rewards_with(4, 1), tag, 1, 6),
                                   group_with(rewards_with(4, 0), tag, 1, 7)};
  CHECK(buf.admit_per_query(groups, 2) == 3);
  CHECK(buf.admit_per_query(groups, 2) == 1);
  CHECK(buf.admit_per_query(groups, 2) == 0);
  std::map<std::int64_t, int> per;
  for (const auto& t : buf.entries()) ++per[t.query.query_id];
  CHECK(per[5] == 2);
  CHECK(per[6] == 2);
  CHECK(per.count(7) == 0);
}
