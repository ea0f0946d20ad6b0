#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyjr/divergence.hpp"
#include "dyjr/grpo_loss.hpp"
#include "dyjr/replay_buffer.hpp"
#include "dyjr/task_env.hpp"

namespace dyjr {

enum class ReplayMode { kGrpo, kDyjr, kRlep, kRlepDynamic };

std::string to_string(ReplayMode mode);
ReplayMode replay_mode_from_string(const std::string& name);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

struct BufferConfig {
  std::int64_t max_age = 8;
  FillSchedule fill;
  // Entries kept per query id in rlep mode.
  std::size_t rlep_per_query = 2;
};

struct TrainConfig {
  TaskSpec task;
  int group_size = 8;
  int prompt_batch = 64;
  int mini_batch = 0;  // prompts per update; 0 = the whole step batch
  int inner_updates = 1;
  std::int64_t total_steps = 300;
  double learning_rate = 400.0;
  OptimizerConfig optimizer;
  ClipConfig clip;
  RegularizerConfig regularizer;
  BufferConfig buffer;
  int replay_batch = 64;
  ReplayMode replay_mode = ReplayMode::kDyjr;
  double temperature_train = 1.0;
  double temperature_eval = 0.7;
  std::int64_t eval_every = 50;
  int eval_queries = 64;
  int eval_samples = 16;
  int metrics_topk = 20;
  std::uint64_t seed = 0;
  int workers = 1;
  std::int64_t checkpoint_every = 0;

  // Throws ConfigError. Also forces regularizer.kind = none for grpo mode.
  void validate();

  std::size_t rollouts_per_step() const {
    return static_cast<std::size_t>(prompt_batch) * static_cast<std::size_t>(group_size);
  }
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);

// Strict: unknown keys and wrong types raise ConfigError. Missing keys keep
// their defaults. The result is validated.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::string& path);

// Applies "a.b.c=value" overrides; value is parsed as JSON when possible and
// taken as a string otherwise.
nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides);

// Hex FNV-1a digest of the fields that determine a run's trajectory (the
// step budget and operational knobs are excluded so a run can be extended).
std::string config_digest(const TrainConfig& cfg);

}  // namespace dyjr
