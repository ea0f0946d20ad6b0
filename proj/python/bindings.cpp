#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dyjr/config.hpp"
#include "dyjr/divergence.hpp"
#include "dyjr/errors.hpp"
#include "dyjr/grpo_loss.hpp"
#include "dyjr/metrics.hpp"
#include "dyjr/replay_buffer.hpp"
#include "dyjr/task_env.hpp"
#include "dyjr/trainer.hpp"

namespace py = pybind11;
using namespace dyjr;

namespace {

Query single_query(int modulus, int target, int seq_len, int vocab_size) {
  TaskSpec spec;
  spec.vocab_size = vocab_size;
  spec.seq_len = seq_len;
  spec.modulus_lo = modulus;
  spec.modulus_hi = modulus;
  spec.validate();
  return make_query(spec, modulus, target);
}

TrainConfig parse_config(const std::string& config_json, const std::vector<std::string>& overrides) {
  auto j = nlohmann::json::parse(config_json, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  return config_from_json(apply_overrides(std::move(j), overrides));
}

}  // namespace

PYBIND11_MODULE(_dyjr, m) {
  m.doc() = "Tabular GRPO / DyJR laboratory";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def(
      "verify",
      [](const std::vector<Token>& tokens, int modulus, int target, int vocab_size) {
        const auto q = single_query(modulus, target, static_cast<int>(tokens.size()), vocab_size);
        return verify(q, tokens);
      },
      py::arg("tokens"), py::arg("modulus"), py::arg("target"), py::arg("vocab_size") = 10);
  m.def(
      "count_solutions",
      [](int modulus, int target, int seq_len, int vocab_size) {
        TaskSpec spec;
        spec.vocab_size = vocab_size;
        spec.seq_len = seq_len;
        spec.modulus_lo = modulus;
        spec.modulus_hi = modulus;
        return count_solutions(single_query(modulus, target, seq_len, vocab_size), spec);
      },
      py::arg("modulus"), py::arg("target"), py::arg("seq_len"), py::arg("vocab_size") = 10);

  m.def(
      "group_advantages",
      [](const std::vector<int>& rewards, double sigma_floor) { return group_advantages(rewards, sigma_floor); },
      py::arg("rewards"), py::arg("sigma_floor") = 1e-6);

  m.def("f_js", &f_js, py::arg("u"));
  m.def("f_fkl", &f_fkl, py::arg("u"));
  m.def("f_js_grad", &f_js_grad_wrt_logprob, py::arg("u"));
  m.def(
      "closed_form_js",
      [](const std::vector<double>& p, const std::vector<double>& q) { return closed_form_js(p, q); },
      py::arg("p"), py::arg("q"));
  m.def(
      "closed_form_kl",
      [](const std::vector<double>& p, const std::vector<double>& q) { return closed_form_kl(p, q); },
      py::arg("p"), py::arg("q"));

  m.def("pass_at_k", &pass_at_k, py::arg("n"), py::arg("c"), py::arg("k"));
  m.def(
      "approx_entropy", [](const std::vector<double>& lp) { return approx_entropy(lp); },
      py::arg("topk_logprobs"));
  m.def(
      "target_fill_count",
      [](std::int64_t step, std::size_t rollouts, std::int64_t warmup_steps, double eta_warmup,
         double eta_steady) {
        FillSchedule s{warmup_steps, eta_warmup, eta_steady};
        s.validate();
        return target_fill_count(s, step, rollouts);
      },
      py::arg("step"), py::arg("rollouts_per_step"), py::arg("warmup_steps") = 20,
      py::arg("eta_warmup") = 0.20, py::arg("eta_steady") = 0.05);

  m.def(
      "resolve_config",
      [](const std::string& config_json, const std::vector<std::string>& overrides) {
        return to_json(parse_config(config_json, overrides)).dump();
      },
      py::arg("config_json"), py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "train_jsonl",
      [](const std::string& config_json, const std::vector<std::string>& overrides) {
        const auto cfg = parse_config(config_json, overrides);
        std::vector<std::string> lines;
        py::gil_scoped_release release;
        Trainer t(cfg);
        t.run([&](const StepRecord& r) { lines.push_back(to_jsonl(r)); });
        return lines;
      },
      py::arg("config_json"), py::arg("overrides") = std::vector<std::string>{},
      "Runs a full training job and returns the metrics log lines.");

  m.def(
      "evaluate_checkpoint",
      [](const std::string& checkpoint, const std::string& config_json) {
        const auto cfg = parse_config(config_json, {});
        const auto params = load_params(checkpoint, cfg);
        py::gil_scoped_release release;
        const auto e = evaluate(params, cfg, make_eval_queries(cfg), 0);
        return std::vector<double>{e.pass1, e.pass16, e.mean_reward, e.distinct_correct_mean};
      },
      py::arg("checkpoint"), py::arg("config_json"));
}
