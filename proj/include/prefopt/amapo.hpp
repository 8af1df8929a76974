#pragma once

#include <span>
#include <utility>
#include <vector>

#include "prefopt/core.hpp"

namespace prefopt {

struct MethodConfig;
struct LossGrad;

// Margins for one batch: raw Z-scored values and their exponential scaling.
struct AdaptiveMarginBatch {
  std::vector<double> r_values;
  BatchStats stats;
  std::vector<double> raw_margins;     // max((mu_r - r)/sigma_r * mu_r, 0)
  std::vector<double> scaled_margins;  // 0 when raw is 0, else beta * exp(raw)
  double beta = 2.0;
};

// The latent reward gap r*(x,y_w) - r*(x,y_l) when the data carries it.
struct OracleMargin {
  double gamma_star = 0.0;
  bool available = false;
};

OracleMargin oracle_margin(const PreferenceInstance& instance);

/// The ideal adaptive margin: gamma_star when r has not yet reached it, 0 once
/// it has.
double ideal_margin(double gamma_star, double r);

/// Z-scored batch margins with exponential scaling. Z-scores are defined as 0
/// when sigma_r < 1e-8 (a constant batch carries no difficulty signal). With
/// clamp_mu, mu_r is clamped to max(mu_r, 0) before it scales the Z-score.
/// Throws ValidationError on an empty batch.
AdaptiveMarginBatch compute_adaptive_margins(std::span<const double> r_values, double beta,
                                             bool clamp_mu = false);

/// Full adaptive-margin objective over a batch: length-normalized ranking
/// scores, batch margins, and per-instance -log sigma(r - margin) with
/// gradients flowing only through r (margins are stop-gradient constants).
std::vector<LossGrad> amapo_loss_grad(std::span<const ScoredInstance> batch,
                                      const MethodConfig& config);

/// Two independent routes to the same quantity: exp(mu_r / beta) from the
/// length-normalized scores, and the batch geometric mean of
/// PPL(y_l)/PPL(y_w). Returns (lhs, rhs).
std::pair<double, double> ppl_equivalence_check(std::span<const ScoredInstance> batch,
                                                double beta);

}  // namespace prefopt
