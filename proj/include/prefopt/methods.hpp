#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefopt/core.hpp"

namespace prefopt {

enum class Method { kDpo, kIpo, kSlic, kCpo, kOdpo, kKto, kSimpo, kFocalpo, kAlphaDpo, kAmapo };

const char* to_string(Method m);
std::vector<std::string> method_names();

// Hyperparameters for all registered methods; each method reads only the
// fields relevant to its decomposition.
struct MethodConfig {
  double beta = 2.0;         // reward temperature (all methods)
  double gamma_const = 1.0;  // SimPO's C / alpha-DPO's constant margin
  double tau = 1.0;          // SLiC hinge label scale (1/delta)
  double lambda_sft = 1.0;   // CPO / SLiC SFT weight
  double lambda_w = 1.0;     // KTO chosen-side weight
  double lambda_l = 1.0;     // KTO rejected-side weight
  double focal_gamma = 1.0;  // FocalPO modulating exponent
  double alpha = 0.1;        // alpha-DPO margin coefficient
  bool delta_r_from_oracle = true;  // ODPO offset source (oracle rewards)
  bool clamp_mu_r = false;   // AMaPO: clamp mu_r to max(mu_r, 0) before scaling
};

// The scoring function m(a) of the unified objective.
enum class ScoringKind {
  kLogisticLog,  // m(a) = log sigma(a): dpo, cpo, odpo, simpo, alpha-dpo, amapo
  kSquared,      // loss (a)^2: ipo
  kHinge,        // loss max(0, 1 - tau a): slic
  kFocal,        // m(a) = sigma(a)^g log sigma(a): focalpo
  kKtoPaired,    // two-sided sigmoid pair: kto
};

// h_w / h_l transform of a log-probability.
struct Transform {
  enum class Kind { kScaled, kLengthScaled, kKtoSigmoid } kind = Kind::kScaled;
  double scale = 1.0;  // beta for the dpo family, 1 for ipo/slic

  double apply(double logp, int length) const;
  double slope(int length) const;  // h'(a); undefined for kKtoSigmoid
};

enum class MarginSource {
  kReferenceRatio,       // (scale * c_ref) + fixed offset: dpo, ipo, slic, focalpo
  kConstant,             // tunable constant: simpo
  kReferencePlusOffset,  // beta c_ref + oracle reward gap: odpo
  kAlphaAdaptive,        // stop-grad batch-normalized policy/reference gap: alpha-dpo
  kAmapoAdaptive,        // stop-grad Z-scored batch margin: amapo
  kNone,                 // structurally absent: cpo, kto
};

// One row of the unified decomposition: the scoring function, the two
// transforms, the margin source and the auxiliary SFT term.
struct MethodSpec {
  Method name = Method::kSimpo;
  ScoringKind scoring_m = ScoringKind::kLogisticLog;
  Transform transform_hw;
  Transform transform_hl;
  MarginSource margin_source = MarginSource::kConstant;
  double aux_lambda = 0.0;  // Lambda(log pi_w) = aux_lambda * log pi_w; 0 = none
  MethodConfig config;

  bool needs_reference() const;
  bool needs_oracle_rewards() const { return name == Method::kOdpo; }
  bool margin_defined() const { return margin_source != MarginSource::kNone; }
  bool batch_margin() const {
    return margin_source == MarginSource::kAlphaAdaptive ||
           margin_source == MarginSource::kAmapoAdaptive;
  }
};

// Loss value and analytic partials with respect to (log pi_w, log pi_l),
// margin held fixed. d_theta_magnitude is m'(r - gamma); margin_used is empty
// for methods whose margin is structurally absent.
struct LossGrad {
  double loss = 0.0;
  double d_logp_w = 0.0;
  double d_logp_l = 0.0;
  double d_theta_magnitude = 0.0;
  std::optional<double> margin_used;
  bool at_hinge_kink = false;
};

/// Looks up one of the ten registered decompositions by name.
/// Throws ValidationError listing the valid names on an unknown method.
MethodSpec registry_lookup(std::string_view name, const MethodConfig& config);
MethodSpec registry_lookup(Method name, const MethodConfig& config);

/// The instance-wise ranking score r = h_w(log pi_w) - h_l(log pi_l).
/// KTO reports the DPO-style beta * (log pi_w - log pi_l) since its sigmoid
/// transforms carry no ranking order.
double instance_score(const MethodSpec& method, const ScoredInstance& scored);

/// The margin for instance-computable sources (reference ratio, constant,
/// oracle offset). Batch-adaptive sources must go through evaluate_batch.
/// Returns 0 for structurally absent margins.
double method_margin(const MethodSpec& method, const ScoredInstance& scored);

/// Unified loss at a precomputed margin. kto_z_ref feeds KTO's two-sided form
/// and is ignored by every other method.
double unified_loss(const MethodSpec& method, const ScoredInstance& scored, double margin,
                    double kto_z_ref = 0.0);

/// Analytic partials of unified_loss with the margin (and z_ref) frozen.
LossGrad unified_grad(const MethodSpec& method, const ScoredInstance& scored, double margin,
                      double kto_z_ref = 0.0);

// Externally supplied normalization stats for alpha-DPO's M* (dataset-level
// mode); per-batch stats are used when absent.
struct NormStats {
  double mu = 0.0;
  double sigma = 0.0;
};

// Margins (and KTO's z_ref) resolved for one batch, plus per-instance grads.
struct BatchEvaluation {
  std::vector<LossGrad> grads;
  std::vector<double> margins;  // arithmetic margin used per instance
  double z_ref = 0.0;           // KTO only
  std::optional<BatchStats> stats;  // amapo r-statistics when applicable
};

/// Batch-synchronous evaluation: resolves batch-dependent quantities
/// (AMaPO margins, alpha-DPO M*, KTO z_ref) first, then evaluates every
/// instance against the frozen values.
BatchEvaluation evaluate_batch(const MethodSpec& method, std::span<const ScoredInstance> batch,
                               const std::optional<NormStats>& alpha_stats = std::nullopt);

/// alpha-DPO's unnormalized gap M = beta * (policy log-ratio - reference
/// log-ratio) for one instance.
double alpha_dpo_gap(const MethodSpec& method, const ScoredInstance& scored);

}  // namespace prefopt
