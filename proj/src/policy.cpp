#include "dyjr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dyjr/errors.hpp"

namespace dyjr {

namespace {

// Visits (position, context) for every token of a sequence.
template <typename Fn>
void for_each_context(const ContextIndexer& indexer, const Query& q, std::span<const Token> tokens,
                      Fn&& fn) {
  if (static_cast<int>(tokens.size()) != q.seq_len)
    throw InputError("token sequence length " + std::to_string(tokens.size()) +
                     " does not match query length " + std::to_string(q.seq_len));
  Token prev = kBos;
  int sum_mod = 0;
  for (int j = 0; j < q.seq_len; ++j) {
    const Token tok = tokens[static_cast<std::size_t>(j)];
    if (tok < 0 || tok >= indexer.vocab_size())
      throw InputError("token " + std::to_string(tok) + " out of range");
    fn(j, indexer.context_of(q, j, prev, sum_mod));
    prev = tok;
    sum_mod = (sum_mod + tok) % q.modulus;
  }
}

}  // namespace

ContextIndexer::ContextIndexer(const TaskSpec& spec)
    : modulus_lo_(spec.modulus_lo),
      modulus_hi_(spec.modulus_hi),
      seq_len_(spec.seq_len),
      vocab_size_(spec.vocab_size) {
  spec.validate();
  const auto n_mod = static_cast<std::size_t>(modulus_hi_ - modulus_lo_ + 1);
  const auto hi = static_cast<std::size_t>(modulus_hi_);
  n_contexts_ = n_mod * hi * static_cast<std::size_t>(seq_len_) *
                static_cast<std::size_t>(vocab_size_ + 1) * hi;
}

Context ContextIndexer::context_of(const Query& q, int position, Token prev_token,
                                   int running_sum_mod) const {
  if (q.modulus < modulus_lo_ || q.modulus > modulus_hi_)
    throw InputError("context_of: modulus outside indexer range");
  if (q.target < 0 || q.target >= q.modulus) throw InputError("context_of: target out of range");
  if (position < 0 || position >= seq_len_)
    throw InputError("context_of: position " + std::to_string(position) + " out of range");
  if (prev_token != kBos && (prev_token < 0 || prev_token >= vocab_size_))
    throw InputError("context_of: previous token out of range");
  if (running_sum_mod < 0 || running_sum_mod >= q.modulus)
    throw InputError("context_of: running sum out of range");
  // BOS occupies slot vocab_size.
  const auto prev_slot = static_cast<std::size_t>(prev_token == kBos ? vocab_size_ : prev_token);
  const auto hi = static_cast<std::size_t>(modulus_hi_);
  std::size_t idx = static_cast<std::size_t>(q.modulus - modulus_lo_);
  idx = idx * hi + static_cast<std::size_t>(q.target);
  idx = idx * static_cast<std::size_t>(seq_len_) + static_cast<std::size_t>(position);
  idx = idx * static_cast<std::size_t>(vocab_size_ + 1) + prev_slot;
  idx = idx * hi + static_cast<std::size_t>(running_sum_mod);
  return Context{idx};
}

PolicyParams::PolicyParams(const TaskSpec& spec)
    : indexer_(spec), table_(indexer_.size() * static_cast<std::size_t>(spec.vocab_size), 0.0) {}

std::span<double> PolicyParams::row(Context ctx) {
  const auto v = static_cast<std::size_t>(vocab_size());
  return {table_.data() + ctx.index * v, v};
}

std::span<const double> PolicyParams::row(Context ctx) const {
  const auto v = static_cast<std::size_t>(vocab_size());
  return {table_.data() + ctx.index * v, v};
}

void PolicyParams::check_finite() const {
  for (std::size_t i = 0; i < table_.size(); ++i) {
    if (!std::isfinite(table_[i]))
      throw NumericError("non-finite policy parameter at flat index " + std::to_string(i));
  }
}

void token_logprobs(std::span<const double> logits, double temperature, std::span<double> out) {
  if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z / temperature);
  double total = 0.0;
  for (double z : logits) total += std::exp(z / temperature - mx);
  const double log_total = std::log(total);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] / temperature - mx - log_total;
}

std::vector<double> token_logprobs(const PolicyParams& params, Context ctx, double temperature) {
  std::vector<double> out(static_cast<std::size_t>(params.vocab_size()));
  token_logprobs(params.row(ctx), temperature, out);
  return out;
}

Trajectory sample_trajectory(const PolicyParams& params, const Query& q, double temperature,
                             std::int64_t step, Rng& rng) {
  const auto& indexer = params.indexer();
  const auto vocab = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> lp(vocab);

  Trajectory traj;
  traj.query = q;
  traj.birth_step = step;
  traj.tokens.reserve(static_cast<std::size_t>(q.seq_len));
  traj.logprobs_old.reserve(static_cast<std::size_t>(q.seq_len));

  Token prev = kBos;
  int sum_mod = 0;
  for (int j = 0; j < q.seq_len; ++j) {
    token_logprobs(params.row(indexer.context_of(q, j, prev, sum_mod)), temperature, lp);
    // Inverse CDF; the last token absorbs rounding slack.
    const double u = rng.uniform01();
    double cdf = 0.0;
    auto tok = static_cast<Token>(vocab - 1);
    for (std::size_t k = 0; k < vocab; ++k) {
      cdf += std::exp(lp[k]);
      if (u < cdf) {
        tok = static_cast<Token>(k);
        break;
      }
    }
    traj.tokens.push_back(tok);
    traj.logprobs_old.push_back(lp[static_cast<std::size_t>(tok)]);
    prev = tok;
    sum_mod = (sum_mod + tok) % q.modulus;
  }
  traj.reward = verify(q, traj.tokens);
  return traj;
}

TokenSeq greedy_decode(const PolicyParams& params, const Query& q) {
  const auto& indexer = params.indexer();
  TokenSeq tokens;
  tokens.reserve(static_cast<std::size_t>(q.seq_len));
  Token prev = kBos;
  int sum_mod = 0;
  for (int j = 0; j < q.seq_len; ++j) {
    const auto row = params.row(indexer.context_of(q, j, prev, sum_mod));
    // max_element returns the first maximum, i.e. the smallest token id.
    const auto tok = static_cast<Token>(std::max_element(row.begin(), row.end()) - row.begin());
    tokens.push_back(tok);
    prev = tok;
    sum_mod = (sum_mod + tok) % q.modulus;
  }
  return tokens;
}

std::vector<double> sequence_logprobs(const PolicyParams& params, const Query& q,
                                      std::span<const Token> tokens, double temperature) {
  std::vector<double> out(tokens.size());
  std::vector<double> lp(static_cast<std::size_t>(params.vocab_size()));
  for_each_context(params.indexer(), q, tokens, [&](int j, Context ctx) {
    token_logprobs(params.row(ctx), temperature, lp);
    out[static_cast<std::size_t>(j)] = lp[static_cast<std::size_t>(tokens[j])];
  });
  return out;
}

void accumulate_weighted_grad(const PolicyParams& params, const Query& q,
                              std::span<const Token> tokens, std::span<const double> weights,
                              double temperature, Gradient& grad) {
  if (weights.size() != tokens.size()) throw InputError("weights/tokens length mismatch");
  std::vector<double> lp(static_cast<std::size_t>(params.vocab_size()));
  for_each_context(params.indexer(), q, tokens, [&](int j, Context ctx) {
    const double w = weights[static_cast<std::size_t>(j)];
    if (!std::isfinite(w)) throw NumericError("non-finite gradient weight");
    if (w == 0.0) return;
    token_logprobs(params.row(ctx), temperature, lp);
    auto g = grad.row(ctx);
    const double scale = w / temperature;
    for (std::size_t k = 0; k < lp.size(); ++k) g[k] -= scale * std::exp(lp[k]);
    g[static_cast<std::size_t>(tokens[j])] += scale;
  });
}

std::vector<TokenLogprob> top_k(std::span<const double> logprobs, int k) {
  if (k < 1 || k > static_cast<int>(logprobs.size()))
    throw InputError("top_k: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(logprobs.size()) + "]");
  std::vector<TokenLogprob> all;
  all.reserve(logprobs.size());
  for (std::size_t i = 0; i < logprobs.size(); ++i)
    all.push_back({static_cast<Token>(i), logprobs[i]});
  const auto by_rank = [](const TokenLogprob& a, const TokenLogprob& b) {
    return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
  };
  std::partial_sort(all.begin(), all.begin() + k, all.end(), by_rank);
  all.resize(static_cast<std::size_t>(k));
  return all;
}

std::vector<TokenLogprob> top_k_logprobs(const PolicyParams& params, Context ctx, int k,
                                         double temperature) {
  return top_k(token_logprobs(params, ctx, temperature), k);
}

}  // namespace dyjr
