#include "dyjr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "dyjr/errors.hpp"

namespace dyjr {

double approx_entropy(std::span<const double> topk_logprobs) {
  if (topk_logprobs.empty()) throw InputError("approx_entropy: need k >= 1");
  const double mx = *std::max_element(topk_logprobs.begin(), topk_logprobs.end());
  double z = 0.0;
  for (double l : topk_logprobs) z += std::exp(l - mx);
  const double log_z = std::log(z);
  double h = 0.0;
  for (double l : topk_logprobs) {
    const double log_p = l - mx - log_z;
    const double p = std::exp(log_p);
    if (p > 0.0) h -= p * log_p;
  }
  return h;
}

double rank_k_avg_prob(std::span<const std::vector<double>> per_token_topk, int rank) {
  if (rank < 1) throw InputError("rank_k_avg_prob: rank must be >= 1");
  if (per_token_topk.empty()) return 0.0;
  double s = 0.0;
  for (const auto& v : per_token_topk) {
    if (static_cast<int>(v.size()) < rank)
      throw InputError("rank_k_avg_prob: rank " + std::to_string(rank) + " exceeds k");
    s += std::exp(v[static_cast<std::size_t>(rank - 1)]);
  }
  return s / static_cast<double>(per_token_topk.size());
}

namespace {

// Exact for n <= 60: the running product r * (n - k + i) stays below 2^64.
std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  if (c > n || k < 1 || k > n)
    throw InputError("pass_at_k: require 0 <= c <= n and 1 <= k <= n");
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;
  if (n <= 60) {
    const std::uint64_t total = binomial(n, k);
    return static_cast<double>(total - binomial(n - c, k)) / static_cast<double>(total);
  }
  // log C(n-c, k) - log C(n, k) = sum_i log((n-c-i) / (n-i))
  double log_ratio = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    log_ratio += std::log1p(-static_cast<double>(c) / static_cast<double>(n - i));
  return -std::expm1(log_ratio);
}

double pass_at_k_naive(std::span<const int> rewards, std::size_t k) {
  if (k < 1 || k > rewards.size()) throw InputError("pass_at_k_naive: require 1 <= k <= n");
  const std::size_t blocks = rewards.size() / k;
  std::size_t hits = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto first = rewards.begin() + static_cast<std::ptrdiff_t>(b * k);
    if (std::any_of(first, first + static_cast<std::ptrdiff_t>(k), [](int r) { return r == 1; }))
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(blocks);
}

double mean_at_n(std::span<const int> rewards) {
  if (rewards.empty()) throw InputError("mean_at_n: empty reward vector");
  double s = 0.0;
  for (int r : rewards) s += r;
  return s / static_cast<double>(rewards.size());
}

std::size_t distinct_correct(const Query& q, std::span<const TokenSeq> responses) {
  std::set<TokenSeq> seen;
  for (const auto& r : responses)
    if (verify(q, r) == 1) seen.insert(r);
  return seen.size();
}

void TokenRankAccumulator::add(std::span<const double> topk_logprobs) {
  if (static_cast<int>(topk_logprobs.size()) != k_)
    throw InputError("TokenRankAccumulator: expected k entries");
  entropy_sum_ += approx_entropy(topk_logprobs);
  for (std::size_t i = 0; i < rank_sums_.size(); ++i) rank_sums_[i] += std::exp(topk_logprobs[i]);
  ++count_;
}

void TokenRankAccumulator::merge(const TokenRankAccumulator& other) {
  if (other.k_ != k_) throw InputError("TokenRankAccumulator: merging different k");
  entropy_sum_ += other.entropy_sum_;
  for (std::size_t i = 0; i < rank_sums_.size(); ++i) rank_sums_[i] += other.rank_sums_[i];
  count_ += other.count_;
}

TokenRankStats TokenRankAccumulator::finish() const {
  TokenRankStats s;
  s.token_count = count_;
  s.rank_prob_mean.assign(rank_sums_.size(), 0.0);
  if (count_ == 0) return s;
  const double inv = 1.0 / static_cast<double>(count_);
  s.approx_entropy_mean = entropy_sum_ * inv;
  for (std::size_t i = 0; i < rank_sums_.size(); ++i) s.rank_prob_mean[i] = rank_sums_[i] * inv;
  return s;
}

}  // namespace dyjr
