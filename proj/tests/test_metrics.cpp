#include <cmath>

#include "doctest.h"
#include "dyjr/errors.hpp"
#include "dyjr/metrics.hpp"
#include "test_util.hpp"

using namespace dyjr;

namespace {

std::vector<double> logs(std::initializer_list<double> probs) {
  std::vector<double> out;
  for (double p : probs) out.push_back(std::log(p));
  return out;
}

// Fraction of k-subsets of n samples (the first c correct) containing a success.
double brute_pass_at_k(unsigned n, unsigned c, unsigned k) {
  std::uint64_t hits = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<unsigned>(__builtin_popcount(mask)) != k) continue;
    ++total;
    if ((mask & ((1u << c) - 1u)) != 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("approx_entropy examples") {
  CHECK(approx_entropy(logs({1 / 3.0, 1 / 3.0, 1 / 3.0})) == doctest::Approx(1.098612).epsilon(1e-6));
  CHECK(approx_entropy(logs({0.7, 0.2, 0.1})) == doctest::Approx(0.801819).epsilon(1e-6));
  // Renormalized over the top k: a truncated uniform is still uniform.
  CHECK(approx_entropy(logs({0.1, 0.1})) == doctest::Approx(std::log(2.0)));
  CHECK(approx_entropy(std::vector<double>{0.0}) == 0.0);
  CHECK(approx_entropy(std::vector<double>{0.0, -1000.0}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(approx_entropy(std::vector<double>{}), InputError);
}

TEST_CASE("rank_k_avg_prob uses raw probabilities") {
  const std::vector<std::vector<double>> toks{logs({0.6, 0.3}), logs({0.8, 0.1})};
  CHECK(rank_k_avg_prob(toks, 1) == doctest::Approx(0.7));
  CHECK(rank_k_avg_prob(toks, 2) == doctest::Approx(0.2));
  CHECK_THROWS_AS(rank_k_avg_prob(toks, 3), InputError);
  CHECK_THROWS_AS(rank_k_avg_prob(toks, 0), InputError);
}

TEST_CASE("pass_at_k examples and errors") {
  CHECK(pass_at_k(8, 2, 4) == doctest::Approx(0.785714).epsilon(1e-6));
  CHECK(pass_at_k(8, 0, 4) == 0.0);
  CHECK(pass_at_k(8, 5, 4) == 1.0);
  CHECK(pass_at_k(10, 3, 1) == doctest::Approx(0.3));
  CHECK_THROWS_AS(pass_at_k(8, 9, 1), InputError);
  CHECK_THROWS_AS(pass_at_k(8, 1, 0), InputError);
  CHECK_THROWS_AS(pass_at_k(8, 1, 9), InputError);
}

TEST_CASE("pass_at_k equals subset enumeration exactly for n <= 8") {
  for (unsigned n = 1; n <= 8; ++n)
    for (unsigned c = 0; c <= n; ++c)
      for (unsigned k = 1; k <= n; ++k) CHECK(pass_at_k(n, c, k) == brute_pass_at_k(n, c, k));
}

TEST_CASE("pass_at_k is monotone in c and k; large n agrees with the exact path") {
  for (std::size_t n : {16u, 60u, 200u})
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t k = 1; k < n; ++k) {
        const double v = pass_at_k(n, c, k);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(pass_at_k(n, c + 1, k) >= v);
        CHECK(pass_at_k(n, c, k + 1) >= v - 1e-15);
      }
  // Both code paths around the switch.
  CHECK(pass_at_k(61, 5, 16) == doctest::Approx(pass_at_k(60, 5, 16)).epsilon(0.05));
}

TEST_CASE("mean@N of Bernoulli draws and the naive block estimator") {
  Rng rng(3);
  std::vector<int> r(256);
  double avg = 0.0;
  const int reps = 400;
  for (int rep = 0; rep < reps; ++rep) {
    for (int& x : r) x = rng.uniform01() < 0.3 ? 1 : 0;
    avg += mean_at_n(r);
  }
  avg /= reps;
  // Standard error of the pooled mean is about 0.0014.
  CHECK(std::abs(avg - 0.3) < 0.006);
  CHECK_THROWS_AS(mean_at_n(std::vector<int>{}), InputError);

  CHECK(pass_at_k_naive(std::vector<int>{0, 1, 0, 0, 1}, 2) == 0.5);
  CHECK(pass_at_k_naive(std::vector<int>{0, 0, 0, 1}, 4) == 1.0);
  CHECK_THROWS_AS(pass_at_k_naive(std::vector<int>{0}, 2), InputError);
}

TEST_CASE("distinct_correct counts unique verified responses") {
  TaskSpec spec;
  spec.vocab_size = 10;
  spec.seq_len = 3;
  spec.modulus_lo = 5;
  spec.modulus_hi = 5;
  const auto q = make_query(spec, 5, 2);
  const std::vector<TokenSeq> resp{{1, 1, 0}, {1, 1, 0}, {0, 0, 2}, {0, 0, 3}, {9, 9, 4}};
  CHECK(distinct_correct(q, resp) == 3);
  CHECK(distinct_correct(q, std::vector<TokenSeq>{}) == 0);
}

TEST_CASE("token rank accumulator merge matches a single pass") {
  Rng rng(10);
  TokenRankAccumulator whole(3), left(3), right(3);
  std::vector<double> lp(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> row(5);
    for (double& x : row) x = 3.0 * rng.uniform01();
    std::vector<double> full(5);
    token_logprobs(row, 1.0, full);
    std::sort(full.begin(), full.end(), std::greater<>());
    std::copy(full.begin(), full.begin() + 3, lp.begin());
    whole.add(lp);
    (i < 20 ? left : right).add(lp);
  }
  left.merge(right);
  const auto a = whole.finish(), b = left.finish();
  CHECK(a.token_count == 50);
  CHECK(b.token_count == 50);
  CHECK(a.approx_entropy_mean == doctest::Approx(b.approx_entropy_mean).epsilon(1e-14));
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(a.rank_prob_mean[i] == doctest::Approx(b.rank_prob_mean[i]).epsilon(1e-14));
  CHECK(a.rank_prob_mean[0] >= a.rank_prob_mean[1]);
  CHECK_THROWS_AS(whole.add(std::vector<double>{0.0}), InputError);
}
