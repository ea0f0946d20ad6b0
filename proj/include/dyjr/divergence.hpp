#pragma once

#include <span>
#include <string>

#include "dyjr/policy.hpp"

namespace dyjr {

enum class RegularizerKind { kJs, kForwardKl, kNone };

std::string to_string(RegularizerKind kind);
RegularizerKind regularizer_kind_from_string(const std::string& name);

struct RegularizerConfig {
  RegularizerKind kind = RegularizerKind::kJs;
  double alpha = 0.05;
  double ratio_clamp = 1e4;

  void validate() const;
};

struct Ratio {
  double u = 1.0;
  bool clamped = false;
};

// exp(logprob_current - logprob_old) clamped into [1/clamp, clamp].
// Throws NumericError on non-finite input.
Ratio ratio_u(double logprob_current, double logprob_old, double clamp);

// u ln u - (u+1) ln((u+1)/2); exactly 0 at u = 1.
double f_js(double u);
// d f_js(u) / d log u = u ln(2u / (u+1)).
double f_js_grad_wrt_logprob(double u);
// (u - 1) - ln u.
double f_fkl(double u);
// d f_fkl(u) / d log u = u - 1.
double f_fkl_grad_wrt_logprob(double u);

struct ReplayStats {
  double loss = 0.0;  // unscaled by alpha
  std::size_t clamp_hits = 0;
};

// (1/|B|) sum_s (1/L_s) sum_j f(u_s^j) over the batch, with u from the stored
// logprobs. Adds the gradient of alpha * loss into grad; clamped ratios carry
// no gradient. An empty batch or kind none yields zero.
ReplayStats replay_loss_and_grad(const PolicyParams& params, std::span<const Trajectory> batch,
                                 const RegularizerConfig& cfg, double temperature,
                                 Gradient& grad);

double replay_loss(const PolicyParams& params, std::span<const Trajectory> batch,
                   const RegularizerConfig& cfg, double temperature);

// Closed-form references over explicit categorical distributions. Inputs
// must be nonnegative, equal length, and sum to 1 within 1e-9.
double closed_form_kl(std::span<const double> p, std::span<const double> q);
double closed_form_js(std::span<const double> p, std::span<const double> q);

}  // namespace dyjr
