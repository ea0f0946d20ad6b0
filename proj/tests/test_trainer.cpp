#include <cmath>
#include <algorithm>
#include <map>
#include <sstream>

#include "doctest.h"
#include "dyjr/config.hpp"
#include "dyjr/errors.hpp"
#include "dyjr/trainer.hpp"

using namespace dyjr;

namespace {

TrainConfig tiny(ReplayMode mode = ReplayMode::kDyjr) {
  TrainConfig c;
  c.task.vocab_size = 4;
  c.task.seq_len = 3;
  c.task.modulus_lo = 2;
  c.task.modulus_hi = 4;
  c.group_size = 4;
  c.prompt_batch = 8;
  c.replay_batch = 8;
  c.total_steps = 6;
  c.eval_every = 3;
  c.eval_queries = 4;
  c.eval_samples = 8;
  c.metrics_topk = 3;
  c.learning_rate = 50.0;
  c.replay_mode = mode;
  c.seed = 5;
  c.validate();
  return c;
}

std::vector<std::string> run_lines(const TrainConfig& cfg) {
  Trainer t(cfg);
  std::vector<std::string> lines;
  t.run([&](const StepRecord& r) { lines.push_back(to_jsonl(r)); });
  return lines;
}

}  // namespace

TEST_CASE("config json: round trip, strict keys, overrides") {
  const auto c = tiny();
  const auto back = config_from_json(to_json(c));
  CHECK(config_digest(back) == config_digest(c));
  CHECK(to_json(back).dump() == to_json(c).dump());

  auto j = nlohmann::json(to_json(c));
  j["learning_rte"] = 1.0;
  CHECK_THROWS_AS(config_from_json(j), ConfigError);

  j = apply_overrides(nlohmann::json(to_json(c)), {"learning_rate=7.5", "replay_mode=rlep", "task.seq_len=2"});
  const auto o = config_from_json(j);
  CHECK(o.learning_rate == 7.5);
  CHECK(o.replay_mode == ReplayMode::kRlep);
  CHECK(o.task.seq_len == 2);
  CHECK(config_digest(o) != config_digest(c));
  CHECK_THROWS_AS(apply_overrides(nlohmann::json(to_json(c)), {"no_equals_sign"}), ConfigError);

  j = nlohmann::json(to_json(c));
  j["group_size"] = 1;
  CHECK_THROWS_AS(config_from_json(j), ConfigError);
  j = nlohmann::json(to_json(c));
  j["replay_mode"] = "bogus";
  CHECK_THROWS_AS(config_from_json(j), ConfigError);
}

TEST_CASE("grpo mode disables the regularizer") {
  auto c = tiny(ReplayMode::kGrpo);
  CHECK(c.regularizer.kind == RegularizerKind::kNone);
}

TEST_CASE("the first step has unit replay ratios and zero regularizer loss") {
  for (auto kind : {RegularizerKind::kJs, RegularizerKind::kForwardKl}) {
    auto c = tiny();
    c.regularizer.kind = kind;
    Trainer t(c);
    const auto r = t.run_step();
    CHECK(r.step == 1);
    CHECK(r.buffer_size > 0);
    CHECK(std::abs(r.loss_reg) <= 1e-12);
    CHECK(r.clamp_hits == 0);
    CHECK(r.rank1_prob.has_value());
    CHECK_FALSE(r.eval_pass1.has_value());
  }
}

TEST_CASE("record fields follow the log column order") {
  Trainer t(tiny());
  const auto j = to_json(t.run_step());
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == step_record_fields());
}

TEST_CASE("runs are reproducible and independent of the worker count") {
  const auto c = tiny();
  const auto a = run_lines(c);
  CHECK(a.size() == 6);
  CHECK(a == run_lines(c));
  auto w = c;
  w.workers = 3;
  CHECK(a == run_lines(w));
  auto s = c;
  s.seed = 6;
  CHECK(a != run_lines(s));
}

TEST_CASE("dyjr with alpha zero follows grpo exactly") {
  auto g = tiny(ReplayMode::kGrpo);
  auto d = tiny(ReplayMode::kDyjr);
  d.regularizer.alpha = 0.0;
  Trainer tg(g), td(d);
  while (!tg.done()) {
    tg.run_step();
    td.run_step();
    CHECK(tg.params().table() == td.params().table());
  }
}

TEST_CASE("evaluation steps carry eval metrics") {
  const auto lines = run_lines(tiny());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto j = nlohmann::json::parse(lines[i]);
    const bool eval_step = (i + 1) % 3 == 0;
    CHECK(j["eval_pass1"].is_null() == !eval_step);
    if (eval_step) {
      CHECK(j["eval_pass16"].get<double>() >= 0.0);
      CHECK(j["eval_pass16"].get<double>() <= 1.0);
    }
  }
}

TEST_CASE("uniform policy evaluation on modulus 2") {
  auto c = tiny();
  c.task.modulus_lo = 2;
  c.task.modulus_hi = 2;
  c.task.vocab_size = 10;
  c.eval_queries = 64;
  c.eval_samples = 16;
  c.temperature_eval = 1.0;
  c.validate();
  const PolicyParams p(c.task);
  const auto qs = make_eval_queries(c);
  const auto m = evaluate(p, c, qs, 0);
  CHECK(std::abs(m.mean_reward - 0.5) <= 0.05);
  // Greedy decodes all zeros, which is correct exactly when the target is 0.
  double zeros = 0.0;
  for (const auto& q : qs) zeros += q.target == 0 ? 1.0 : 0.0;
  CHECK(m.pass1 == doctest::Approx(zeros / static_cast<double>(qs.size())));
  CHECK(m.pass16 > 0.99);
  CHECK(evaluate(p, c, qs, 0).mean_reward == m.mean_reward);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted log") {
  for (auto mode : {ReplayMode::kDyjr, ReplayMode::kRlep}) {
    auto c = tiny(mode);
    c.optimizer.kind = OptimizerKind::kAdam;
    c.learning_rate = 0.5;
    const auto full = run_lines(c);

    Trainer first(c);
    for (int i = 0; i < 3; ++i) first.run_step();
    // Through a serialized string, as the CLI does.
    const auto ckpt = nlohmann::json::parse(first.checkpoint_json().dump());
    Trainer second(c);
    second.restore(ckpt);
    CHECK(second.step() == 3);
    CHECK(second.buffer().size() == first.buffer().size());
    std::vector<std::string> tail;
    second.run([&](const StepRecord& r) { tail.push_back(to_jsonl(r)); });
    REQUIRE(tail.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(tail[i] == full[i + 3]);
  }
}

TEST_CASE("restore rejects mismatched or corrupt checkpoints without side effects") {
  const auto c = tiny();
  Trainer t(c);
  t.run_step();
  const auto good = t.checkpoint_json();

  auto other = c;
  other.learning_rate = 1.0;
  Trainer fresh(other);
  CHECK_THROWS_AS(fresh.restore(good), ConfigError);
  CHECK(fresh.step() == 0);

  Trainer u(c);
  auto bad = good;
  bad["table"].erase(0);
  CHECK_THROWS(u.restore(bad));
  bad = good;
  bad["table"][0] = "x";
  CHECK_THROWS(u.restore(bad));
  bad = good;
  bad["buffer"]["entries"][0]["reward"] = 0;
  CHECK_THROWS(u.restore(bad));
  bad = good;
  bad.erase("optimizer");
  CHECK_THROWS_AS(u.restore(bad), IoError);
  CHECK(u.step() == 0);
  CHECK(u.buffer().empty());
  for (double v : u.params().table()) CHECK(v == 0.0);
  CHECK_NOTHROW(u.restore(good));
  CHECK(u.step() == 1);
}

TEST_CASE("rlep buffer only grows and respects the per-query cap") {
  auto c = tiny(ReplayMode::kRlep);
  c.total_steps = 10;
  Trainer t(c);
  std::size_t prev = 0;
  while (!t.done()) {
    const auto r = t.run_step();
    CHECK(r.buffer_size >= prev);
    CHECK(r.evicted_count == 0);
    prev = r.buffer_size;
  }
  std::map<std::int64_t, std::size_t> per;
  for (const auto& e : t.buffer().entries()) {
    CHECK(e.reward == 1);
    ++per[e.query.query_id];
  }
  for (const auto& [q, n] : per) CHECK(n <= c.buffer.rlep_per_query);
}

TEST_CASE("dyjr buffer entries stay within the max age") {
  auto c = tiny();
  c.buffer.max_age = 2;
  c.total_steps = 8;
  Trainer t(c);
  while (!t.done()) {
    t.run_step();
    for (const auto& e : t.buffer().entries()) {
      CHECK(e.reward == 1);
      CHECK(t.step() - e.birth_step <= 2);
    }
  }
}

TEST_CASE("report_csv") {
  std::istringstream log(run_lines(tiny())[0] + "\n" + run_lines(tiny())[2] + "\n\n");
  const auto csv = report_csv(log);
  std::istringstream rows(csv);
  std::string header, first, second, extra;
  std::getline(rows, header);
  std::getline(rows, first);
  std::getline(rows, second);
  CHECK_FALSE(std::getline(rows, extra));
  CHECK(header.rfind("step,mean_reward,", 0) == 0);
  CHECK(first.rfind("1,", 0) == 0);
  // eval columns are empty on non-eval steps
  CHECK(first.find(",,") != std::string::npos);
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(first.begin(), first.end(), ','));

  std::istringstream broken(run_lines(tiny())[0] + "\n{\"step\": 2}\n");
  try {
    report_csv(broken);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::istringstream garbage("not json\n");
  CHECK_THROWS_AS(report_csv(garbage), IoError);
}
