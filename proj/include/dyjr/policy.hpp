#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dyjr/rng.hpp"
#include "dyjr/task_env.hpp"

namespace dyjr {

// Row index into the logits table.
struct Context {
  std::size_t index = 0;
  friend bool operator==(const Context&, const Context&) = default;
};

inline constexpr Token kBos = -1;

// Flat multi-index over (modulus, target, position, previous token or BOS,
// running sum mod m). Every feature tuple gets its own row, no hashing.
class ContextIndexer {
 public:
  ContextIndexer() = default;
  explicit ContextIndexer(const TaskSpec& spec);

  std::size_t size() const noexcept { return n_contexts_; }
  int vocab_size() const noexcept { return vocab_size_; }
  int seq_len() const noexcept { return seq_len_; }

  // Throws InputError on any out-of-range feature.
  Context context_of(const Query& q, int position, Token prev_token, int running_sum_mod) const;

 private:
  int modulus_lo_ = 2;
  int modulus_hi_ = 2;
  int seq_len_ = 1;
  int vocab_size_ = 2;
  std::size_t n_contexts_ = 0;
};

// Logits table of the tabular softmax policy, shape [n_contexts, vocab_size].
class PolicyParams {
 public:
  PolicyParams() = default;
  // All-zero logits, i.e. the uniform policy.
  explicit PolicyParams(const TaskSpec& spec);

  const ContextIndexer& indexer() const noexcept { return indexer_; }
  int vocab_size() const noexcept { return indexer_.vocab_size(); }
  std::size_t n_contexts() const noexcept { return indexer_.size(); }

  std::span<double> row(Context ctx);
  std::span<const double> row(Context ctx) const;

  std::vector<double>& table() noexcept { return table_; }
  const std::vector<double>& table() const noexcept { return table_; }

  // Throws NumericError if any entry is NaN or infinite.
  void check_finite() const;

 private:
  ContextIndexer indexer_;
  std::vector<double> table_;
};

// Dense gradient with the same layout as PolicyParams::table().
struct Gradient {
  std::vector<double> data;
  int vocab_size = 0;

  Gradient() = default;
  explicit Gradient(const PolicyParams& params)
      : data(params.table().size(), 0.0), vocab_size(params.vocab_size()) {}

  std::span<double> row(Context ctx) {
    return {data.data() + ctx.index * static_cast<std::size_t>(vocab_size),
            static_cast<std::size_t>(vocab_size)};
  }
  void clear() { std::fill(data.begin(), data.end(), 0.0); }
};

struct Trajectory {
  Query query;
  TokenSeq tokens;
  std::vector<double> logprobs_old;  // per-token log pi at generation time
  int reward = 0;
  std::int64_t birth_step = 0;
  // Group-relative advantage from the rollout that produced this sample.
  double advantage = 0.0;
};

// log-softmax(logits / temperature), max-subtracted.
void token_logprobs(std::span<const double> logits, double temperature, std::span<double> out);
std::vector<double> token_logprobs(const PolicyParams& params, Context ctx, double temperature);

Trajectory sample_trajectory(const PolicyParams& params, const Query& q, double temperature,
                             std::int64_t step, Rng& rng);

// Argmax decoding, ties to the smaller token id.
TokenSeq greedy_decode(const PolicyParams& params, const Query& q);

std::vector<double> sequence_logprobs(const PolicyParams& params, const Query& q,
                                      std::span<const Token> tokens, double temperature);

// grad += sum_j w_j * (onehot(y_j) - p(ctx_j)) / temperature, i.e. the gradient
// of sum_j w_j log pi(y_j | ctx_j) with respect to the logits.
void accumulate_weighted_grad(const PolicyParams& params, const Query& q,
                              std::span<const Token> tokens, std::span<const double> weights,
                              double temperature, Gradient& grad);

struct TokenLogprob {
  Token token;
  double logprob;
  friend bool operator==(const TokenLogprob&, const TokenLogprob&) = default;
};

// The k largest entries, descending, ties to the smaller token id.
std::vector<TokenLogprob> top_k(std::span<const double> logprobs, int k);
std::vector<TokenLogprob> top_k_logprobs(const PolicyParams& params, Context ctx, int k,
                                         double temperature);

}  // namespace dyjr
