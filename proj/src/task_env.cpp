#include "dyjr/task_env.hpp"

#include <cmath>

#include "dyjr/errors.hpp"

namespace dyjr {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kModSum:
      return "modsum";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "modsum") return TaskKind::kModSum;
  throw ConfigError("unknown task_kind '" + name + "'");
}

void TaskSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("task.vocab_size must be >= 2");
  if (seq_len < 1) throw ConfigError("task.seq_len must be >= 1");
  if (modulus_lo < 2 || modulus_lo > modulus_hi)
    throw ConfigError("task.modulus_range must satisfy 2 <= lo <= hi");
}

int TaskSpec::problem_count() const { return (modulus_hi - modulus_lo + 1) * modulus_hi; }

Query make_query(const TaskSpec& spec, int modulus, int target) {
  if (modulus < spec.modulus_lo || modulus > spec.modulus_hi || target < 0 || target >= modulus)
    throw InputError("query (m=" + std::to_string(modulus) + ", t=" + std::to_string(target) +
                     ") outside task spec");
  Query q;
  q.query_id = static_cast<std::int64_t>(modulus - spec.modulus_lo) * spec.modulus_hi + target;
  q.modulus = modulus;
  q.target = target;
  q.seq_len = spec.seq_len;
  q.vocab_size = spec.vocab_size;
  return q;
}

std::vector<Query> sample_queries(const TaskSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  if (n == 0) throw ConfigError("sample_queries: n must be >= 1");
  std::vector<Query> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int m = static_cast<int>(rng.uniform_int(spec.modulus_lo, spec.modulus_hi));
    const int t = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(m)));
    out.push_back(make_query(spec, m, t));
  }
  return out;
}

int verify(const Query& q, std::span<const Token> tokens) {
  if (static_cast<int>(tokens.size()) != q.seq_len)
    throw InputError("verify: expected " + std::to_string(q.seq_len) + " tokens, got " +
                     std::to_string(tokens.size()));
  std::int64_t sum = 0;
  for (Token tok : tokens) {
    if (tok < 0 || tok >= q.vocab_size)
      throw InputError("verify: token " + std::to_string(tok) + " out of range");
    sum += tok;
  }
  return (sum % q.modulus) == q.target ? 1 : 0;
}

std::uint64_t count_solutions(const Query& q, const TaskSpec& spec) {
  if (static_cast<double>(spec.seq_len) * std::log10(static_cast<double>(spec.vocab_size)) >
      8.0 + 1e-12)
    throw CapacityError("count_solutions: vocab_size^seq_len exceeds 1e8");
  const int m = q.modulus;
  // ways[r] = number of prefixes whose sum is r mod m
  std::vector<std::uint64_t> ways(static_cast<std::size_t>(m), 0);
  ways[0] = 1;
  for (int pos = 0; pos < spec.seq_len; ++pos) {
    std::vector<std::uint64_t> next(ways.size(), 0);
    for (int r = 0; r < m; ++r) {
      if (ways[r] == 0) continue;
      for (int tok = 0; tok < spec.vocab_size; ++tok) next[(r + tok) % m] += ways[r];
    }
    ways = std::move(next);
  }
  return ways[static_cast<std::size_t>(q.target)];
}

}  // namespace dyjr
