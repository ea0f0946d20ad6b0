#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyjr/config.hpp"
#include "dyjr/grpo_loss.hpp"
#include "dyjr/policy.hpp"
#include "dyjr/replay_buffer.hpp"

namespace dyjr {

struct EvalMetrics {
  double pass1 = 0.0;
  double pass16 = 0.0;
  double mean_reward = 0.0;
  double distinct_correct_mean = 0.0;
};

// One row of the metrics log.
struct StepRecord {
  std::int64_t step = 0;
  double mean_reward = 0.0;
  double loss_grpo = 0.0;
  double loss_reg = 0.0;
  std::size_t buffer_size = 0;
  std::size_t admitted_count = 0;
  std::size_t evicted_count = 0;
  double approx_entropy_mean = 0.0;
  std::optional<double> rank1_prob;
  std::optional<double> rank2_prob;
  std::optional<double> rank3_prob;
  std::optional<double> eval_pass1;
  std::optional<double> eval_pass16;
  std::optional<double> eval_mean_reward;
  std::optional<double> distinct_correct_mean;
  std::size_t clamp_hits = 0;
};

// Column order of the metrics log and the CSV report.
const std::vector<std::string>& step_record_fields();

nlohmann::ordered_json to_json(const StepRecord& r);
// Single-line JSON, the exact bytes written to the log.
std::string to_jsonl(const StepRecord& r);

// Greedy pass@1 plus sampled pass@k / mean reward / distinct-correct count
// on held-out queries. Sampling is seeded from (seed, step) only.
EvalMetrics evaluate(const PolicyParams& params, const TrainConfig& cfg,
                     const std::vector<Query>& eval_queries, std::int64_t step);

// Held-out queries drawn from the evaluation stream of the run seed.
std::vector<Query> make_eval_queries(const TrainConfig& cfg);

// Runs the rollout / buffer maintenance / optimization loop one step at a time.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const noexcept { return cfg_; }
  const PolicyParams& params() const noexcept { return params_; }
  PolicyParams& mutable_params() noexcept { return params_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  std::int64_t step() const noexcept { return step_; }
  bool done() const noexcept { return step_ >= cfg_.total_steps; }

  // Runs step() + 1. Throws NumericError on a non-finite loss or parameter,
  // after writing a dump of the offending batch to dump_dir (if set).
  StepRecord run_step();

  // Runs until total_steps, invoking on_step after every step.
  void run(const std::function<void(const StepRecord&)>& on_step = {});

  EvalMetrics evaluate_now() const;

  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

  nlohmann::json checkpoint_json() const;
  // Validates the whole checkpoint before mutating any state.
  void restore(const nlohmann::json& ckpt);

 private:
  void apply_update(const Gradient& grad);
  void dump_batch(const std::vector<GroupRollout>& groups, const std::string& what) const;

  TrainConfig cfg_;
  PolicyParams params_;
  ReplayBuffer buffer_;
  std::vector<Query> eval_queries_;
  std::int64_t step_ = 0;
  std::filesystem::path dump_dir_;

  // Adam state; empty when the optimizer is SGD.
  std::vector<double> adam_m_;
  std::vector<double> adam_v_;
  std::int64_t adam_t_ = 0;
};

void save_checkpoint(const Trainer& trainer, const std::filesystem::path& path);
void load_checkpoint(Trainer& trainer, const std::filesystem::path& path);

// Loads only the parameter table, checking its shape against cfg.
PolicyParams load_params(const std::filesystem::path& path, const TrainConfig& cfg);

// JSONL metrics log -> CSV with one row per step. Throws IoError naming the
// line number of any malformed row.
std::string report_csv(std::istream& log);
void report(const std::filesystem::path& log_path, const std::filesystem::path& out_path);

}  // namespace dyjr
