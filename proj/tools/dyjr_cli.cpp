// dyjr: train / eval / report front end.
//
//   dyjr train  --config cfg.json [--seed N] [--out DIR] [--override key=value ...]
//               [--resume CHECKPOINT]
//   dyjr eval   --checkpoint ckpt.json --config cfg.json
//   dyjr report --log metrics.jsonl --out report.csv
//
// Exit codes: 0 success, 2 config error, 3 numeric error, 4 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dyjr/config.hpp"
#include "dyjr/errors.hpp"
#include "dyjr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

dyjr::TrainConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed,
                                 const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw dyjr::IoError("cannot open config file '" + path + "'");
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw dyjr::ConfigError("config file '" + path + "' is not valid JSON");
  j = dyjr::apply_overrides(std::move(j), overrides);
  if (seed) j["seed"] = *seed;
  return dyjr::config_from_json(j);
}

int run_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const fs::path& out_dir, const std::vector<std::string>& overrides,
              const std::string& resume) {
  auto cfg = resolve_config(config_path, seed, overrides);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw dyjr::IoError("cannot create output directory '" + out_dir.string() + "'");

  dyjr::Trainer trainer(cfg);
  trainer.set_dump_dir(out_dir);
  if (!resume.empty()) dyjr::load_checkpoint(trainer, resume);

  {
    std::ofstream resolved(out_dir / "config.resolved.json", std::ios::trunc);
    resolved << dyjr::to_json(trainer.config()).dump(2) << '\n';
  }
  const auto log_path = out_dir / "metrics.jsonl";
  std::ofstream log(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw dyjr::IoError("cannot open '" + log_path.string() + "'");

  const auto every = trainer.config().checkpoint_every;
  trainer.run([&](const dyjr::StepRecord& rec) {
    log << dyjr::to_jsonl(rec) << '\n';
    if (!log) throw dyjr::IoError("failed writing metrics log");
    if (every > 0 && rec.step % every == 0)
      dyjr::save_checkpoint(trainer, out_dir / ("checkpoint_step_" + std::to_string(rec.step) +
                                                ".json"));
  });
  log.flush();
  dyjr::save_checkpoint(trainer, out_dir / "checkpoint_final.json");
  std::cerr << "trained " << trainer.step() << " steps; log at " << log_path.string() << '\n';
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& config_path) {
  const auto cfg = resolve_config(config_path, std::nullopt, {});
  const auto params = dyjr::load_params(checkpoint, cfg);
  const json ckpt_step = [&] {
    std::ifstream in(checkpoint);
    return json::parse(in, nullptr, false);
  }();
  const std::int64_t step = ckpt_step.is_object() ? ckpt_step.value("step", std::int64_t{0}) : 0;
  const auto m = dyjr::evaluate(params, cfg, dyjr::make_eval_queries(cfg), step);
  nlohmann::ordered_json out;
  out["step"] = step;
  out["eval_pass1"] = m.pass1;
  out["eval_pass16"] = m.pass16;
  out["eval_mean_reward"] = m.mean_reward;
  out["distinct_correct_mean"] = m.distinct_correct_mean;
  std::cout << out.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DyJR / GRPO tabular laboratory"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "run a training experiment");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "run";
  std::vector<std::string> overrides;
  std::string resume;
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--out", out_dir, "output directory")->capture_default_str();
  train->add_option("--override", overrides, "key=value config override (dotted keys)");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint;
  std::string eval_config;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--config", eval_config, "experiment config (JSON)")->required();

  auto* rep = app.add_subcommand("report", "convert a metrics log to CSV");
  std::string log_path;
  std::string csv_path;
  rep->add_option("--log", log_path, "metrics.jsonl")->required();
  rep->add_option("--out", csv_path, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(dyjr::ExitCode::kConfig);
  }

  try {
    if (*train) return run_train(config_path, seed, out_dir, overrides, resume);
    if (*eval) return run_eval(checkpoint, eval_config);
    if (*rep) {
      dyjr::report(log_path, csv_path);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(dyjr::exit_code(e));
  }
  return 0;
}
