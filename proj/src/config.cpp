#include "dyjr/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dyjr/errors.hpp"

namespace dyjr {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(ReplayMode mode) {
  switch (mode) {
    case ReplayMode::kGrpo:
      return "grpo";
    case ReplayMode::kDyjr:
      return "dyjr";
    case ReplayMode::kRlep:
      return "rlep";
    case ReplayMode::kRlepDynamic:
      return "rlep_dynamic";
  }
  return "unknown";
}

ReplayMode replay_mode_from_string(const std::string& name) {
  if (name == "grpo") return ReplayMode::kGrpo;
  if (name == "dyjr") return ReplayMode::kDyjr;
  if (name == "rlep") return ReplayMode::kRlep;
  if (name == "rlep_dynamic") return ReplayMode::kRlepDynamic;
  throw ConfigError("unknown replay_mode '" + name + "'");
}

namespace {

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer kind '" + name + "'");
}

// Dispatches each key of an object to a handler; unknown keys are errors.
using Handlers = std::map<std::string, std::function<void(const json&)>>;

void read_object(const json& j, const std::string& where, const Handlers& handlers) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown config key '" + where + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + where + key + "': " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> into(T& field) {
  return [&field](const json& v) {
    if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer, got " + v.dump());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("expected a number, got " + v.dump());
    }
    field = v.get<T>();
  };
}

}  // namespace

void TrainConfig::validate() {
  task.validate();
  clip.validate();
  regularizer.validate();
  buffer.fill.validate();
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (prompt_batch < 1) throw ConfigError("prompt_batch must be >= 1");
  if (mini_batch < 0) throw ConfigError("mini_batch must be >= 0");
  if (inner_updates < 1) throw ConfigError("inner_updates must be >= 1");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be > 0");
  if (buffer.max_age < 0) throw ConfigError("buffer.max_age must be >= 0");
  if (buffer.rlep_per_query < 1) throw ConfigError("buffer.rlep_per_query must be >= 1");
  if (replay_batch < 1) throw ConfigError("replay_batch must be >= 1");
  if (!(temperature_train > 0.0) || !(temperature_eval > 0.0))
    throw ConfigError("temperatures must be > 0");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (eval_queries < 1) throw ConfigError("eval_queries must be >= 1");
  if (eval_samples < 1) throw ConfigError("eval_samples must be >= 1");
  if (metrics_topk < 1) throw ConfigError("metrics_topk must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 &&
        optimizer.beta2 < 1.0 && optimizer.eps > 0.0))
    throw ConfigError("optimizer betas must lie in [0, 1) and eps must be > 0");
  if (replay_mode == ReplayMode::kGrpo) regularizer.kind = RegularizerKind::kNone;
}

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["task"] = {{"task_kind", to_string(c.task.kind)},
               {"vocab_size", c.task.vocab_size},
               {"seq_len", c.task.seq_len},
               {"modulus_range", {c.task.modulus_lo, c.task.modulus_hi}}};
  j["group_size"] = c.group_size;
  j["prompt_batch"] = c.prompt_batch;
  j["mini_batch"] = c.mini_batch;
  j["inner_updates"] = c.inner_updates;
  j["total_steps"] = c.total_steps;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = {{"kind", optimizer_name(c.optimizer.kind)},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["clip"] = {{"eps_low", c.clip.eps_low},
               {"eps_high", c.clip.eps_high},
               {"sigma_floor", c.clip.sigma_floor}};
  j["regularizer"] = {{"kind", to_string(c.regularizer.kind)},
                      {"alpha", c.regularizer.alpha},
                      {"ratio_clamp", c.regularizer.ratio_clamp}};
  j["buffer"] = {{"max_age", c.buffer.max_age},
                 {"warmup_steps", c.buffer.fill.warmup_steps},
                 {"eta_warmup", c.buffer.fill.eta_warmup},
                 {"eta_steady", c.buffer.fill.eta_steady},
                 {"rlep_per_query", c.buffer.rlep_per_query}};
  j["replay_batch"] = c.replay_batch;
  j["replay_mode"] = to_string(c.replay_mode);
  j["temperature_train"] = c.temperature_train;
  j["temperature_eval"] = c.temperature_eval;
  j["eval_every"] = c.eval_every;
  j["eval_queries"] = c.eval_queries;
  j["eval_samples"] = c.eval_samples;
  j["metrics_topk"] = c.metrics_topk;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  std::string mode = to_string(c.replay_mode);
  std::string reg_kind = to_string(c.regularizer.kind);
  std::string opt_kind = optimizer_name(c.optimizer.kind);
  std::string task_kind = to_string(c.task.kind);

  Handlers task{
      {"task_kind", into(task_kind)},
      {"vocab_size", into(c.task.vocab_size)},
      {"seq_len", into(c.task.seq_len)},
      {"modulus_range",
       [&](const json& v) {
         if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() ||
             !v[1].is_number_integer())
           throw ConfigError("task.modulus_range must be [lo, hi]");
         c.task.modulus_lo = v[0].get<int>();
         c.task.modulus_hi = v[1].get<int>();
       }},
  };
  Handlers optimizer{{"kind", into(opt_kind)},
                     {"beta1", into(c.optimizer.beta1)},
                     {"beta2", into(c.optimizer.beta2)},
                     {"eps", into(c.optimizer.eps)}};
  Handlers clip{{"eps_low", into(c.clip.eps_low)},
                {"eps_high", into(c.clip.eps_high)},
                {"sigma_floor", into(c.clip.sigma_floor)}};
  Handlers reg{{"kind", into(reg_kind)},
               {"alpha", into(c.regularizer.alpha)},
               {"ratio_clamp", into(c.regularizer.ratio_clamp)}};
  Handlers buffer{{"max_age", into(c.buffer.max_age)},
                  {"warmup_steps", into(c.buffer.fill.warmup_steps)},
                  {"eta_warmup", into(c.buffer.fill.eta_warmup)},
                  {"eta_steady", into(c.buffer.fill.eta_steady)},
                  {"rlep_per_query", into(c.buffer.rlep_per_query)}};

  Handlers top{
      {"task", [&](const json& v) { read_object(v, "task.", task); }},
      {"group_size", into(c.group_size)},
      {"prompt_batch", into(c.prompt_batch)},
      {"mini_batch", into(c.mini_batch)},
      {"inner_updates", into(c.inner_updates)},
      {"total_steps", into(c.total_steps)},
      {"learning_rate", into(c.learning_rate)},
      {"optimizer", [&](const json& v) { read_object(v, "optimizer.", optimizer); }},
      {"clip", [&](const json& v) { read_object(v, "clip.", clip); }},
      {"regularizer", [&](const json& v) { read_object(v, "regularizer.", reg); }},
      {"buffer", [&](const json& v) { read_object(v, "buffer.", buffer); }},
      {"replay_batch", into(c.replay_batch)},
      {"replay_mode", into(mode)},
      {"temperature_train", into(c.temperature_train)},
      {"temperature_eval", into(c.temperature_eval)},
      {"eval_every", into(c.eval_every)},
      {"eval_queries", into(c.eval_queries)},
      {"eval_samples", into(c.eval_samples)},
      {"metrics_topk", into(c.metrics_topk)},
      {"seed", into(c.seed)},
      {"workers", into(c.workers)},
      {"checkpoint_every", into(c.checkpoint_every)},
  };
  read_object(j, "", top);

  c.task.kind = task_kind_from_string(task_kind);
  c.replay_mode = replay_mode_from_string(mode);
  c.regularizer.kind = regularizer_kind_from_string(reg_kind);
  c.optimizer.kind = optimizer_from_string(opt_kind);
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + ov + "' is not of the form key=value");
    const std::string key = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;

    json* node = &j;
    std::stringstream path(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(path, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->is_object()) throw ConfigError("override path '" + key + "' is not an object");
      node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = value;
  }
  return j;
}

std::string config_digest(const TrainConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("total_steps");
  j.erase("eval_every");
  j.erase("workers");
  j.erase("checkpoint_every");
  const std::string canon = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dyjr
