#include "prefopt/amapo.hpp"

#include <cmath>

#include "prefopt/methods.hpp"

namespace prefopt {

OracleMargin oracle_margin(const PreferenceInstance& instance) {
  if (!instance.has_oracle_rewards()) return {};
  return {*instance.oracle_reward_chosen - *instance.oracle_reward_rejected, true};
}

double ideal_margin(double gamma_star, double r) {
  if (!std::isfinite(gamma_star)) throw ValidationError("non-finite argument");
  return (gamma_star - r) > 0.0 ? gamma_star : 0.0;
}

AdaptiveMarginBatch compute_adaptive_margins(std::span<const double> r_values, double beta,
                                             bool clamp_mu) {
  if (r_values.empty()) throw ValidationError("empty batch");
  if (beta <= 0.0) throw ValidationError("beta must be > 0");
  AdaptiveMarginBatch out;
  out.r_values.assign(r_values.begin(), r_values.end());
  out.beta = beta;
  out.stats = batch_stats(r_values);
  out.raw_margins.resize(r_values.size());
  out.scaled_margins.resize(r_values.size());
  const double mu = out.stats.mu_r;
  const double sigma = out.stats.sigma_r;
  const double mu_scale = clamp_mu ? std::max(mu, 0.0) : mu;
  for (std::size_t i = 0; i < r_values.size(); ++i) {
    const double z = sigma < 1e-8 ? 0.0 : (mu - r_values[i]) / sigma;
    const double raw = std::max(z * mu_scale, 0.0);
    out.raw_margins[i] = raw;
    out.scaled_margins[i] = raw == 0.0 ? 0.0 : beta * std::exp(raw);
  }
  return out;
}

std::vector<LossGrad> amapo_loss_grad(std::span<const ScoredInstance> batch,
                                      const MethodConfig& config) {
  const MethodSpec spec = registry_lookup(Method::kAmapo, config);
  return evaluate_batch(spec, batch).grads;
}

std::pair<double, double> ppl_equivalence_check(std::span<const ScoredInstance> batch,
                                                double beta) {
  if (batch.empty()) throw ValidationError("empty batch");
  double sum_r = 0.0;
  double sum_log_ratio = 0.0;
  for (const ScoredInstance& s : batch) {
    sum_r += beta / s.instance.chosen_length * s.logp_chosen -
             beta / s.instance.rejected_length * s.logp_rejected;
    const double ppl_l = perplexity(s.logp_rejected, s.instance.rejected_length);
    const double ppl_w = perplexity(s.logp_chosen, s.instance.chosen_length);
    sum_log_ratio += std::log(ppl_l / ppl_w);
  }
  const double n = static_cast<double>(batch.size());
  const double lhs = std::exp(sum_r / n / beta);
  const double rhs = std::exp(sum_log_ratio / n);
  return {lhs, rhs};
}

}  // namespace prefopt
