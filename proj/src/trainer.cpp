#include "dyjr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "dyjr/divergence.hpp"
#include "dyjr/errors.hpp"
#include "dyjr/metrics.hpp"

namespace dyjr {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index writes
// only its own output slot, so results do not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const auto w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

ordered_json query_to_json(const Query& q) {
  return {{"query_id", q.query_id},
          {"modulus", q.modulus},
          {"target", q.target},
          {"seq_len", q.seq_len},
          {"vocab_size", q.vocab_size}};
}

ordered_json trajectory_to_json(const Trajectory& t) {
  return {{"query", query_to_json(t.query)},   {"tokens", t.tokens},
          {"logprobs_old", t.logprobs_old},     {"reward", t.reward},
          {"birth_step", t.birth_step},         {"advantage", t.advantage}};
}

Trajectory trajectory_from_json(const json& j, const TaskSpec& spec) {
  Trajectory t;
  const auto& q = j.at("query");
  t.query = make_query(spec, q.at("modulus").get<int>(), q.at("target").get<int>());
  if (t.query.query_id != q.at("query_id").get<std::int64_t>())
    throw InputError("buffer entry has inconsistent query_id");
  t.tokens = j.at("tokens").get<TokenSeq>();
  t.logprobs_old = j.at("logprobs_old").get<std::vector<double>>();
  t.reward = j.at("reward").get<int>();
  t.birth_step = j.at("birth_step").get<std::int64_t>();
  t.advantage = j.at("advantage").get<double>();
  if (t.logprobs_old.size() != t.tokens.size())
    throw InputError("buffer entry has mismatched tokens/logprobs lengths");
  if (verify(t.query, t.tokens) != t.reward) throw InputError("buffer entry reward mismatch");
  return t;
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object())
    throw IoError("checkpoint '" + path.string() + "' is not a valid JSON object");
  return j;
}

void check_shape(const json& ckpt, const TrainConfig& cfg) {
  const PolicyParams expected(cfg.task);
  try {
    const auto vocab = ckpt.at("vocab_size").get<std::int64_t>();
    const auto n_ctx = ckpt.at("n_contexts").get<std::int64_t>();
    if (vocab != expected.vocab_size() || n_ctx != static_cast<std::int64_t>(expected.n_contexts()))
      throw ConfigError("checkpoint shape [" + std::to_string(n_ctx) + ", " +
                        std::to_string(vocab) + "] does not match config [" +
                        std::to_string(expected.n_contexts()) + ", " +
                        std::to_string(expected.vocab_size()) + "]");
    if (ckpt.at("table").size() != expected.table().size())
      throw ConfigError("checkpoint table length does not match its declared shape");
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

std::vector<double> table_from_json(const json& ckpt) {
  std::vector<double> table;
  table.reserve(ckpt.at("table").size());
  for (const auto& v : ckpt.at("table")) {
    if (!v.is_number()) throw IoError("checkpoint table holds a non-numeric entry");
    table.push_back(v.get<double>());
  }
  return table;
}

}  // namespace

const std::vector<std::string>& step_record_fields() {
  static const std::vector<std::string> fields = {
      "step",          "mean_reward",         "loss_grpo",        "loss_reg",
      "buffer_size",   "admitted_count",      "evicted_count",    "approx_entropy_mean",
      "rank1_prob",    "rank2_prob",          "rank3_prob",       "eval_pass1",
      "eval_pass16",   "eval_mean_reward",    "distinct_correct_mean", "clamp_hits"};
  return fields;
}

ordered_json to_json(const StepRecord& r) {
  const auto opt = [](const std::optional<double>& v) -> ordered_json {
    return v ? ordered_json(*v) : ordered_json(nullptr);
  };
  ordered_json j;
  j["step"] = r.step;
  j["mean_reward"] = r.mean_reward;
  j["loss_grpo"] = r.loss_grpo;
  j["loss_reg"] = r.loss_reg;
  j["buffer_size"] = r.buffer_size;
  j["admitted_count"] = r.admitted_count;
  j["evicted_count"] = r.evicted_count;
  j["approx_entropy_mean"] = r.approx_entropy_mean;
  j["rank1_prob"] = opt(r.rank1_prob);
  j["rank2_prob"] = opt(r.rank2_prob);
  j["rank3_prob"] = opt(r.rank3_prob);
  j["eval_pass1"] = opt(r.eval_pass1);
  j["eval_pass16"] = opt(r.eval_pass16);
  j["eval_mean_reward"] = opt(r.eval_mean_reward);
  j["distinct_correct_mean"] = opt(r.distinct_correct_mean);
  j["clamp_hits"] = r.clamp_hits;
  return j;
}

std::string to_jsonl(const StepRecord& r) { return to_json(r).dump(); }

std::vector<Query> make_eval_queries(const TrainConfig& cfg) {
  Rng rng(cfg.seed, Stream::kEvalQueries);
  return sample_queries(cfg.task, static_cast<std::size_t>(cfg.eval_queries), rng);
}

EvalMetrics evaluate(const PolicyParams& params, const TrainConfig& cfg,
                     const std::vector<Query>& eval_queries, std::int64_t step) {
  struct PerQuery {
    double greedy = 0.0;
    double pass_k = 0.0;
    double mean = 0.0;
    double distinct = 0.0;
  };
  const auto n_samples = static_cast<std::size_t>(cfg.eval_samples);
  const std::size_t k = std::min<std::size_t>(16, n_samples);
  std::vector<PerQuery> per(eval_queries.size());

  parallel_for(eval_queries.size(), cfg.workers, [&](std::size_t i) {
    const Query& q = eval_queries[i];
    Rng rng(cfg.seed, Stream::kEvalSampling, static_cast<std::uint64_t>(step), i);
    std::vector<TokenSeq> responses;
    std::vector<int> rewards;
    responses.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
      auto t = sample_trajectory(params, q, cfg.temperature_eval, step, rng);
      rewards.push_back(t.reward);
      responses.push_back(std::move(t.tokens));
    }
    const auto correct = static_cast<std::size_t>(std::count(rewards.begin(), rewards.end(), 1));
    per[i].greedy = verify(q, greedy_decode(params, q));
    per[i].pass_k = pass_at_k(n_samples, correct, k);
    per[i].mean = mean_at_n(rewards);
    per[i].distinct = static_cast<double>(distinct_correct(q, responses));
  });

  EvalMetrics m;
  for (const auto& p : per) {
    m.pass1 += p.greedy;
    m.pass16 += p.pass_k;
    m.mean_reward += p.mean;
    m.distinct_correct_mean += p.distinct;
  }
  const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(per.size(), 1));
  m.pass1 *= inv;
  m.pass16 *= inv;
  m.mean_reward *= inv;
  m.distinct_correct_mean *= inv;
  return m;
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  params_ = PolicyParams(cfg_.task);
  buffer_ = ReplayBuffer(cfg_.buffer.max_age);
  eval_queries_ = make_eval_queries(cfg_);
  if (cfg_.optimizer.kind == OptimizerKind::kAdam) {
    adam_m_.assign(params_.table().size(), 0.0);
    adam_v_.assign(params_.table().size(), 0.0);
  }
}

void Trainer::apply_update(const Gradient& grad) {
  auto& theta = params_.table();
  const double lr = cfg_.learning_rate;
  if (cfg_.optimizer.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * grad.data[i];
  } else {
    const auto& o = cfg_.optimizer;
    ++adam_t_;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(adam_t_));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(adam_t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad.data[i];
      adam_m_[i] = o.beta1 * adam_m_[i] + (1.0 - o.beta1) * g;
      adam_v_[i] = o.beta2 * adam_v_[i] + (1.0 - o.beta2) * g * g;
      theta[i] -= lr * (adam_m_[i] / c1) / (std::sqrt(adam_v_[i] / c2) + o.eps);
    }
  }
  params_.check_finite();
}

void Trainer::dump_batch(const std::vector<GroupRollout>& groups, const std::string& what) const {
  if (dump_dir_.empty()) return;
  ordered_json j;
  j["step"] = step_ + 1;
  j["error"] = what;
  j["groups"] = ordered_json::array();
  for (const auto& g : groups) {
    ordered_json gj;
    gj["query"] = query_to_json(g.query);
    gj["advantages"] = g.advantages;
    gj["trajectories"] = ordered_json::array();
    for (const auto& t : g.trajectories) gj["trajectories"].push_back(trajectory_to_json(t));
    j["groups"].push_back(std::move(gj));
  }
  std::error_code ec;
  std::filesystem::create_directories(dump_dir_, ec);
  std::ofstream out(dump_dir_ / ("numeric_error_step_" + std::to_string(step_ + 1) + ".json"));
  out << j.dump(1) << '\n';
}

StepRecord Trainer::run_step() {
  const std::int64_t t = step_ + 1;
  const auto seed = cfg_.seed;
  const auto G = static_cast<std::size_t>(cfg_.group_size);
  const int topk = std::min(cfg_.metrics_topk, params_.vocab_size());

  // Rollout against the current (frozen) parameters.
  Rng query_rng(seed, Stream::kQueries, static_cast<std::uint64_t>(t));
  const auto queries =
      sample_queries(cfg_.task, static_cast<std::size_t>(cfg_.prompt_batch), query_rng);
  std::vector<GroupRollout> groups(queries.size());
  std::vector<TokenRankAccumulator> ranks(queries.size(), TokenRankAccumulator(topk));
  parallel_for(queries.size(), cfg_.workers, [&](std::size_t i) {
    Rng rng(seed, Stream::kRollout, static_cast<std::uint64_t>(t), i);
    std::vector<Trajectory> trajs;
    trajs.reserve(G);
    std::vector<double> lp(static_cast<std::size_t>(params_.vocab_size()));
    std::vector<double> top(static_cast<std::size_t>(topk));
    for (std::size_t g = 0; g < G; ++g) {
      trajs.push_back(sample_trajectory(params_, queries[i], cfg_.temperature_train, t, rng));
      const auto& traj = trajs.back();
      Token prev = kBos;
      int sum_mod = 0;
      for (int j = 0; j < queries[i].seq_len; ++j) {
        const Context ctx = params_.indexer().context_of(queries[i], j, prev, sum_mod);
        token_logprobs(params_.row(ctx), cfg_.temperature_train, lp);
        const auto best = top_k(lp, topk);
        for (std::size_t r = 0; r < best.size(); ++r) top[r] = best[r].logprob;
        ranks[i].add(top);
        prev = traj.tokens[static_cast<std::size_t>(j)];
        sum_mod = (sum_mod + prev) % queries[i].modulus;
      }
    }
    groups[i] = make_group(queries[i], std::move(trajs), cfg_.clip.sigma_floor);
  });

  StepRecord rec;
  rec.step = t;
  {
    double total = 0.0;
    for (const auto& g : groups)
      for (int r : g.rewards) total += r;
    rec.mean_reward = total / static_cast<double>(cfg_.rollouts_per_step());
    TokenRankAccumulator all(topk);
    for (const auto& r : ranks) all.merge(r);
    const auto stats = all.finish();
    rec.approx_entropy_mean = stats.approx_entropy_mean;
    if (topk >= 1) rec.rank1_prob = stats.rank_prob_mean[0];
    if (topk >= 2) rec.rank2_prob = stats.rank_prob_mean[1];
    if (topk >= 3) rec.rank3_prob = stats.rank_prob_mean[2];
  }

  // Buffer maintenance precedes optimization, so same-step admissions are
  // replayable (with ratio exactly 1 on first use).
  switch (cfg_.replay_mode) {
    case ReplayMode::kGrpo:
      break;
    case ReplayMode::kDyjr:
    case ReplayMode::kRlepDynamic: {
      rec.evicted_count = buffer_.evict_stale(t);
      const auto quota = target_fill_count(cfg_.buffer.fill, t, cfg_.rollouts_per_step());
      Rng admit_rng(seed, Stream::kAdmission, static_cast<std::uint64_t>(t));
      rec.admitted_count = buffer_.admit(groups, quota, admit_rng).admitted;
      break;
    }
    case ReplayMode::kRlep:
      rec.admitted_count = buffer_.admit_per_query(groups, cfg_.buffer.rlep_per_query);
      break;
  }
  rec.buffer_size = buffer_.size();

  // Optimization.
  const std::size_t n_groups = groups.size();
  const std::size_t chunk =
      cfg_.mini_batch > 0 ? std::min<std::size_t>(static_cast<std::size_t>(cfg_.mini_batch), n_groups)
                          : n_groups;
  const std::size_t n_chunks = (n_groups + chunk - 1) / chunk;
  Gradient grad(params_);
  double loss_grpo_sum = 0.0;
  double loss_reg_sum = 0.0;
  std::size_t updates = 0;
  try {
    for (int pass = 0; pass < cfg_.inner_updates; ++pass) {
      for (std::size_t c = 0; c < n_chunks; ++c) {
        grad.clear();
        const std::span<const GroupRollout> part(groups.data() + c * chunk,
                                                 std::min(chunk, n_groups - c * chunk));
        const auto on = grpo_loss_and_grad(params_, part, cfg_.clip, cfg_.temperature_train, grad);
        loss_grpo_sum += on.loss;

        if (cfg_.replay_mode != ReplayMode::kGrpo) {
          Rng replay_rng(seed, Stream::kReplay, static_cast<std::uint64_t>(t),
                         static_cast<std::uint64_t>(pass) * n_chunks + c);
          const auto batch =
              buffer_.sample(static_cast<std::size_t>(cfg_.replay_batch), replay_rng);
          if (cfg_.replay_mode == ReplayMode::kDyjr) {
            const auto reg = replay_loss_and_grad(params_, batch, cfg_.regularizer,
                                                  cfg_.temperature_train, grad);
            loss_reg_sum += reg.loss;
            rec.clamp_hits += reg.clamp_hits;
          } else {
            const auto exp_term =
                surrogate_loss_and_grad(params_, batch, cfg_.clip, cfg_.temperature_train, grad);
            loss_reg_sum += exp_term.loss;
          }
        }
        if (!std::isfinite(loss_grpo_sum) || !std::isfinite(loss_reg_sum))
          throw NumericError("non-finite loss at step " + std::to_string(t));
        apply_update(grad);
        ++updates;
      }
    }
  } catch (const NumericError& e) {
    dump_batch(groups, e.what());
    throw;
  }
  rec.loss_grpo = loss_grpo_sum / static_cast<double>(updates);
  rec.loss_reg = loss_reg_sum / static_cast<double>(updates);

  step_ = t;
  if (cfg_.eval_every > 0 && (t % cfg_.eval_every == 0 || t == cfg_.total_steps)) {
    const auto ev = evaluate_now();
    rec.eval_pass1 = ev.pass1;
    rec.eval_pass16 = ev.pass16;
    rec.eval_mean_reward = ev.mean_reward;
    rec.distinct_correct_mean = ev.distinct_correct_mean;
  }
  return rec;
}

void Trainer::run(const std::function<void(const StepRecord&)>& on_step) {
  while (!done()) {
    const auto rec = run_step();
    if (on_step) on_step(rec);
  }
}

EvalMetrics Trainer::evaluate_now() const { return evaluate(params_, cfg_, eval_queries_, step_); }

json Trainer::checkpoint_json() const {
  ordered_json j;
  j["step"] = step_;
  j["vocab_size"] = params_.vocab_size();
  j["n_contexts"] = params_.n_contexts();
  j["table"] = params_.table();
  j["config_digest"] = config_digest(cfg_);
  // Every random stream is derived from (seed, stream, step, index), so the
  // root seed and the step counter fully restore them.
  j["rng"] = {{"scheme", "derived-per-step"}, {"root_seed", cfg_.seed}};
  j["optimizer"] = {{"kind", cfg_.optimizer.kind == OptimizerKind::kAdam ? "adam" : "sgd"},
                    {"t", adam_t_},
                    {"m", adam_m_},
                    {"v", adam_v_}};
  ordered_json entries = ordered_json::array();
  for (const auto& e : buffer_.entries()) entries.push_back(trajectory_to_json(e));
  j["buffer"] = {{"max_age", buffer_.max_age()}, {"entries", std::move(entries)}};
  return j;
}

void Trainer::restore(const json& ckpt) {
  check_shape(ckpt, cfg_);
  try {
    const auto digest = ckpt.at("config_digest").get<std::string>();
    if (digest != config_digest(cfg_))
      throw ConfigError("checkpoint config digest " + digest + " does not match config digest " +
                        config_digest(cfg_) + "; refusing to resume");
    if (ckpt.at("rng").at("root_seed").get<std::uint64_t>() != cfg_.seed)
      throw ConfigError("checkpoint seed does not match config seed");

    const auto step = ckpt.at("step").get<std::int64_t>();
    if (step < 0) throw IoError("checkpoint step is negative");
    auto table = table_from_json(ckpt);
    for (double v : table)
      if (!std::isfinite(v)) throw NumericError("checkpoint holds non-finite parameters");

    const auto& opt = ckpt.at("optimizer");
    auto m = opt.at("m").get<std::vector<double>>();
    auto v = opt.at("v").get<std::vector<double>>();
    const auto adam_t = opt.at("t").get<std::int64_t>();
    const std::size_t expect = cfg_.optimizer.kind == OptimizerKind::kAdam ? table.size() : 0;
    if (m.size() != expect || v.size() != expect)
      throw ConfigError("checkpoint optimizer state does not match configured optimizer");

    std::deque<Trajectory> entries;
    for (const auto& e : ckpt.at("buffer").at("entries"))
      entries.push_back(trajectory_from_json(e, cfg_.task));

    // Everything parsed; commit.
    params_.table() = std::move(table);
    adam_m_ = std::move(m);
    adam_v_ = std::move(v);
    adam_t_ = adam_t;
    buffer_.restore(std::move(entries));
    step_ = step;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const InputError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Trainer& trainer, const std::filesystem::path& path) {
  write_atomic(path, trainer.checkpoint_json().dump() + "\n");
}

void load_checkpoint(Trainer& trainer, const std::filesystem::path& path) {
  trainer.restore(parse_checkpoint(path));
}

PolicyParams load_params(const std::filesystem::path& path, const TrainConfig& cfg) {
  const json ckpt = parse_checkpoint(path);
  check_shape(ckpt, cfg);
  PolicyParams params(cfg.task);
  try {
    params.table() = table_from_json(ckpt);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
  params.check_finite();
  return params;
}

std::string report_csv(std::istream& log) {
  const auto& fields = step_record_fields();
  std::ostringstream out;
  for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << fields[i];
  out << '\n';

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(log, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json row = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (row.is_discarded() || !row.is_object())
      throw IoError("metrics log line " + std::to_string(lineno) + ": not a JSON object");
    if (row.size() != fields.size())
      throw IoError("metrics log line " + std::to_string(lineno) + ": expected " +
                    std::to_string(fields.size()) + " fields");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto it = row.find(fields[i]);
      if (it == row.end())
        throw IoError("metrics log line " + std::to_string(lineno) + ": missing field '" +
                      fields[i] + "'");
      if (!it->is_null() && !it->is_number())
        throw IoError("metrics log line " + std::to_string(lineno) + ": field '" + fields[i] +
                      "' is not a number");
      out << (i ? "," : "");
      if (!it->is_null()) out << it->dump();
    }
    out << '\n';
  }
  return out.str();
}

void report(const std::filesystem::path& log_path, const std::filesystem::path& out_path) {
  std::ifstream in(log_path);
  if (!in) throw IoError("cannot open metrics log '" + log_path.string() + "'");
  const std::string csv = report_csv(in);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + out_path.string() + "'");
  out << csv;
  if (!out) throw IoError("failed writing '" + out_path.string() + "'");
}

}  // namespace dyjr
