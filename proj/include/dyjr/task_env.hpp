#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dyjr/rng.hpp"

namespace dyjr {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

enum class TaskKind { kModSum };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

// A family of "emit L tokens whose sum is t mod m" problems.
struct TaskSpec {
  TaskKind kind = TaskKind::kModSum;
  int vocab_size = 10;
  int seq_len = 6;
  int modulus_lo = 3;
  int modulus_hi = 9;

  // Throws ConfigError on violated bounds.
  void validate() const;

  // Number of distinct (modulus, target) problems; query ids live in [0, n).
  int problem_count() const;
};

struct Query {
  // Canonical problem index of (modulus, target) within the spec, so repeated
  // draws of the same problem share an id.
  std::int64_t query_id = 0;
  int target = 0;
  int modulus = 2;
  int seq_len = 1;
  int vocab_size = 2;

  friend bool operator==(const Query&, const Query&) = default;
};

Query make_query(const TaskSpec& spec, int modulus, int target);

std::vector<Query> sample_queries(const TaskSpec& spec, std::size_t n, Rng& rng);

// 1 iff sum(tokens) mod modulus == target. Throws InputError on a token
// sequence of the wrong length or with out-of-range tokens.
int verify(const Query& q, std::span<const Token> tokens);

// Exact number of rewarded sequences, by dynamic programming over residues.
// Throws CapacityError when vocab_size^seq_len exceeds 1e8.
std::uint64_t count_solutions(const Query& q, const TaskSpec& spec);

}  // namespace dyjr
