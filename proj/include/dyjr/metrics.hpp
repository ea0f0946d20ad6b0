#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dyjr/task_env.hpp"

namespace dyjr {

// Entropy of the top-k distribution renormalized over its k entries.
double approx_entropy(std::span<const double> topk_logprobs);

// Mean over tokens of exp(logprob at `rank`), rank counted from 1, using the
// raw (not renormalized) probabilities. Throws InputError if any entry has
// fewer than `rank` values.
double rank_k_avg_prob(std::span<const std::vector<double>> per_token_topk, int rank);

// Unbiased pass@k: 1 - C(n-c, k) / C(n, k). Throws InputError unless
// 0 <= c <= n and 1 <= k <= n.
double pass_at_k(std::size_t n, std::size_t c, std::size_t k);

// Fraction of consecutive k-blocks with at least one success; a trailing
// partial block is ignored.
double pass_at_k_naive(std::span<const int> rewards, std::size_t k);

double mean_at_n(std::span<const int> rewards);

std::size_t distinct_correct(const Query& q, std::span<const TokenSeq> responses);

struct TokenRankStats {
  double approx_entropy_mean = 0.0;
  std::vector<double> rank_prob_mean;  // index 0 is rank 1
  std::size_t token_count = 0;
};

// Streams per-token top-k logprob vectors (sorted, descending) into the
// running means of TokenRankStats.
class TokenRankAccumulator {
 public:
  explicit TokenRankAccumulator(int k) : k_(k), rank_sums_(static_cast<std::size_t>(k), 0.0) {}

  void add(std::span<const double> topk_logprobs);
  // Adds another accumulator's sums; merging in a fixed order keeps results
  // independent of how tokens were partitioned across workers.
  void merge(const TokenRankAccumulator& other);
  TokenRankStats finish() const;

 private:
  int k_;
  double entropy_sum_ = 0.0;
  std::vector<double> rank_sums_;
  std::size_t count_ = 0;
};

}  // namespace dyjr
