#include "dyjr/divergence.hpp"

#include <cmath>
#include <limits>

#include "dyjr/errors.hpp"

namespace dyjr {

std::string to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::kJs:
      return "js";
    case RegularizerKind::kForwardKl:
      return "forward_kl";
    case RegularizerKind::kNone:
      return "none";
  }
  return "unknown";
}

RegularizerKind regularizer_kind_from_string(const std::string& name) {
  if (name == "js") return RegularizerKind::kJs;
  if (name == "forward_kl") return RegularizerKind::kForwardKl;
  if (name == "none") return RegularizerKind::kNone;
  throw ConfigError("unknown regularizer kind '" + name + "'");
}

void RegularizerConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("regularizer.alpha must be >= 0");
  if (!(ratio_clamp > 1.0)) throw ConfigError("regularizer.ratio_clamp must be > 1");
}

Ratio ratio_u(double logprob_current, double logprob_old, double clamp) {
  if (!std::isfinite(logprob_current) || !std::isfinite(logprob_old))
    throw NumericError("ratio_u: non-finite log-probability");
  const double log_clamp = std::log(clamp);
  const double diff = logprob_current - logprob_old;
  if (diff >= log_clamp) return {clamp, diff > log_clamp};
  if (diff <= -log_clamp) return {1.0 / clamp, diff < -log_clamp};
  return {std::exp(diff), false};
}

namespace {

void require_positive(double u) {
  if (!(u > 0.0) || !std::isfinite(u))
    throw InputError("divergence generator requires finite u > 0, got " + std::to_string(u));
}

bool near_one(double u) { return u > 0.5 && u < 2.0; }

}  // namespace

double f_js(double u) {
  require_positive(u);
  if (u == 1.0) return 0.0;
  const double d = u - 1.0;
  // log1p(u - 1) loses relative accuracy once u - 1 is rounded far from 1.
  const double v = near_one(u) ? u * std::log1p(d) - (u + 1.0) * std::log1p(0.5 * d)
                               : u * std::log(u) - (u + 1.0) * std::log(0.5 * (u + 1.0));
  return v > 0.0 ? v : 0.0;
}

double f_js_grad_wrt_logprob(double u) {
  require_positive(u);
  if (near_one(u)) return u * std::log1p((u - 1.0) / (u + 1.0));
  return u * std::log(2.0 * u / (u + 1.0));
}

double f_fkl(double u) {
  require_positive(u);
  const double d = u - 1.0;
  const double v = d - (near_one(u) ? std::log1p(d) : std::log(u));
  return v > 0.0 ? v : 0.0;
}

double f_fkl_grad_wrt_logprob(double u) {
  require_positive(u);
  return u - 1.0;
}

namespace {

ReplayStats run_replay(const PolicyParams& params, std::span<const Trajectory> batch,
                       const RegularizerConfig& cfg, double temperature, Gradient* grad) {
  ReplayStats stats;
  if (batch.empty() || cfg.kind == RegularizerKind::kNone) return stats;
  const bool js = cfg.kind == RegularizerKind::kJs;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  std::vector<double> w;
  for (const auto& traj : batch) {
    const auto lp = sequence_logprobs(params, traj.query, traj.tokens, temperature);
    const double inv_len = 1.0 / static_cast<double>(lp.size());
    w.assign(lp.size(), 0.0);
    double seq = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) {
      const Ratio r = ratio_u(lp[j], traj.logprobs_old[j], cfg.ratio_clamp);
      if (r.clamped) ++stats.clamp_hits;
      seq += js ? f_js(r.u) : f_fkl(r.u);
      if (!r.clamped) {
        const double g = js ? f_js_grad_wrt_logprob(r.u) : f_fkl_grad_wrt_logprob(r.u);
        w[j] = cfg.alpha * g * inv_len * inv_batch;
      }
    }
    total += seq * inv_len;
    if (grad != nullptr && cfg.alpha != 0.0)
      accumulate_weighted_grad(params, traj.query, traj.tokens, w, temperature, *grad);
  }
  stats.loss = total * inv_batch;
  return stats;
}

void check_simplex(std::span<const double> p, const char* name) {
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x))
      throw InputError(std::string(name) + " has a negative or non-finite entry");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw InputError(std::string(name) + " does not sum to 1");
}

}  // namespace

ReplayStats replay_loss_and_grad(const PolicyParams& params, std::span<const Trajectory> batch,
                                 const RegularizerConfig& cfg, double temperature,
                                 Gradient& grad) {
  return run_replay(params, batch, cfg, temperature, &grad);
}

double replay_loss(const PolicyParams& params, std::span<const Trajectory> batch,
                   const RegularizerConfig& cfg, double temperature) {
  return run_replay(params, batch, cfg, temperature, nullptr).loss;
}

double closed_form_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw InputError("closed_form_kl: length mismatch");
  check_simplex(p, "p");
  check_simplex(q, "q");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

double closed_form_js(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw InputError("closed_form_js: length mismatch");
  check_simplex(p, "p");
  check_simplex(q, "q");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return js;
}

}  // namespace dyjr
