#include "prefopt/methods.hpp"

#include <algorithm>
#include <cmath>

#include "prefopt/amapo.hpp"

namespace prefopt {

const char* to_string(Method m) {
  switch (m) {
    case Method::kDpo: return "dpo";
    case Method::kIpo: return "ipo";
    case Method::kSlic: return "slic";
    case Method::kCpo: return "cpo";
    case Method::kOdpo: return "odpo";
    case Method::kKto: return "kto";
    case Method::kSimpo: return "simpo";
    case Method::kFocalpo: return "focalpo";
    case Method::kAlphaDpo: return "alpha_dpo";
    case Method::kAmapo: return "amapo";
  }
  return "simpo";
}

std::vector<std::string> method_names() {
  return {"dpo", "ipo", "slic", "cpo", "odpo", "kto", "simpo", "focalpo", "alpha_dpo", "amapo"};
}

double Transform::apply(double logp, int length) const {
  switch (kind) {
    case Kind::kScaled: return scale * logp;
    case Kind::kLengthScaled: return scale / static_cast<double>(length) * logp;
    case Kind::kKtoSigmoid: break;
  }
  throw ValidationError("KTO transform has no pointwise application");
}

double Transform::slope(int length) const {
  switch (kind) {
    case Kind::kScaled: return scale;
    case Kind::kLengthScaled: return scale / static_cast<double>(length);
    case Kind::kKtoSigmoid: break;
  }
  throw ValidationError("KTO transform has no constant slope");
}

bool MethodSpec::needs_reference() const {
  switch (name) {
    case Method::kDpo:
    case Method::kIpo:
    case Method::kSlic:
    case Method::kOdpo:
    case Method::kKto:
    case Method::kFocalpo:
    case Method::kAlphaDpo:
      return true;
    case Method::kCpo:
    case Method::kSimpo:
    case Method::kAmapo:
      return false;
  }
  return false;
}

MethodSpec registry_lookup(Method name, const MethodConfig& config) {
  if (config.beta <= 0.0) throw ValidationError("beta must be > 0");
  MethodSpec s;
  s.name = name;
  s.config = config;
  const Transform scaled_beta{Transform::Kind::kScaled, config.beta};
  const Transform identity{Transform::Kind::kScaled, 1.0};
  const Transform length_beta{Transform::Kind::kLengthScaled, config.beta};
  switch (name) {
    case Method::kDpo:
      s.scoring_m = ScoringKind::kLogisticLog;
      s.transform_hw = s.transform_hl = scaled_beta;
      s.margin_source = MarginSource::kReferenceRatio;
      break;
    case Method::kIpo:
      s.scoring_m = ScoringKind::kSquared;
      s.transform_hw = s.transform_hl = identity;
      s.margin_source = MarginSource::kReferenceRatio;
      break;
    case Method::kSlic:
      s.scoring_m = ScoringKind::kHinge;
      s.transform_hw = s.transform_hl = identity;
      s.margin_source = MarginSource::kReferenceRatio;
      s.aux_lambda = config.lambda_sft;
      if (config.tau <= 0.0) throw ValidationError("tau must be > 0");
      break;
    case Method::kCpo:
      s.scoring_m = ScoringKind::kLogisticLog;
      s.transform_hw = s.transform_hl = scaled_beta;
      s.margin_source = MarginSource::kNone;
      s.aux_lambda = config.lambda_sft;
      break;
    case Method::kOdpo:
      s.scoring_m = ScoringKind::kLogisticLog;
      s.transform_hw = s.transform_hl = scaled_beta;
      s.margin_source = MarginSource::kReferencePlusOffset;
      if (!config.delta_r_from_oracle)
        throw ValidationError("odpo's reward offset must come from oracle rewards");
      break;
    case Method::kKto:
      s.scoring_m = ScoringKind::kKtoPaired;
      s.transform_hw = s.transform_hl = Transform{Transform::Kind::kKtoSigmoid, config.beta};
      s.margin_source = MarginSource::kNone;
      if (config.lambda_w <= 0.0 || config.lambda_l <= 0.0)
        throw ValidationError("lambda_w and lambda_l must be > 0");
      break;
    case Method::kSimpo:
      s.scoring_m = ScoringKind::kLogisticLog;
      s.transform_hw = s.transform_hl = length_beta;
      s.margin_source = MarginSource::kConstant;
      break;
    case Method::kFocalpo:
      s.scoring_m = ScoringKind::kFocal;
      s.transform_hw = s.transform_hl = scaled_beta;
      s.margin_source = MarginSource::kReferenceRatio;
      if (config.focal_gamma < 0.0) throw ValidationError("focal_gamma must be >= 0");
      break;
    case Method::kAlphaDpo:
      s.scoring_m = ScoringKind::kLogisticLog;
      s.transform_hw = s.transform_hl = length_beta;
      s.margin_source = MarginSource::kAlphaAdaptive;
      break;
    case Method::kAmapo:
      s.scoring_m = ScoringKind::kLogisticLog;
      s.transform_hw = s.transform_hl = length_beta;
      s.margin_source = MarginSource::kAmapoAdaptive;
      break;
  }
  return s;
}

MethodSpec registry_lookup(std::string_view name, const MethodConfig& config) {
  const auto names = method_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (name == names[i]) return registry_lookup(static_cast<Method>(i), config);
  }
  std::string valid;
  for (const auto& n : names) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw ValidationError("unknown method '" + std::string(name) + "'; valid names: " + valid);
}

namespace {

void require_inputs(const MethodSpec& m, const ScoredInstance& s) {
  if (m.needs_reference() && !s.instance.has_ref_logp())
    throw ValidationError("reference log-probs required");
  if (m.needs_oracle_rewards() && !s.instance.has_oracle_rewards())
    throw ValidationError("oracle rewards required");
}

double ref_ratio(const ScoredInstance& s) {
  return *s.instance.ref_logp_chosen - *s.instance.ref_logp_rejected;
}

struct KtoSides {
  double sigma_w, sigma_l;
};

KtoSides kto_sides(const MethodSpec& m, const ScoredInstance& s, double z_ref) {
  const double beta = m.config.beta;
  const double uw = beta * (s.logp_chosen - *s.instance.ref_logp_chosen) - z_ref;
  const double ul = z_ref - beta * (s.logp_rejected - *s.instance.ref_logp_rejected);
  return {sigmoid(uw), sigmoid(ul)};
}

}  // namespace

double instance_score(const MethodSpec& method, const ScoredInstance& scored) {
  require_inputs(method, scored);
  if (method.name == Method::kKto)
    return method.config.beta * (scored.logp_chosen - scored.logp_rejected);
  return method.transform_hw.apply(scored.logp_chosen, scored.instance.chosen_length) -
         method.transform_hl.apply(scored.logp_rejected, scored.instance.rejected_length);
}

double method_margin(const MethodSpec& method, const ScoredInstance& scored) {
  require_inputs(method, scored);
  switch (method.margin_source) {
    case MarginSource::kReferenceRatio: {
      const double scale = method.transform_hw.slope(1);
      const double offset =
          method.name == Method::kIpo ? 1.0 / (2.0 * method.config.beta) : 0.0;
      return scale * ref_ratio(scored) + offset;
    }
    case MarginSource::kConstant:
      return method.config.gamma_const;
    case MarginSource::kReferencePlusOffset:
      return method.config.beta * ref_ratio(scored) +
             (*scored.instance.oracle_reward_chosen - *scored.instance.oracle_reward_rejected);
    case MarginSource::kNone:
      return 0.0;
    case MarginSource::kAlphaAdaptive:
    case MarginSource::kAmapoAdaptive:
      throw ValidationError("batch-adaptive margin must be resolved through evaluate_batch");
  }
  return 0.0;
}

double unified_loss(const MethodSpec& method, const ScoredInstance& scored, double margin,
                    double kto_z_ref) {
  require_inputs(method, scored);
  if (method.scoring_m == ScoringKind::kKtoPaired) {
    const auto [sw, sl] = kto_sides(method, scored, kto_z_ref);
    return method.config.lambda_w * (1.0 - sw) + method.config.lambda_l * (1.0 - sl);
  }
  const double u = instance_score(method, scored) - margin;
  const double sft = -method.aux_lambda * scored.logp_chosen;
  switch (method.scoring_m) {
    case ScoringKind::kLogisticLog:
      return -log_sigmoid(u) + sft;
    case ScoringKind::kSquared:
      return u * u;
    case ScoringKind::kHinge:
      return std::max(0.0, 1.0 - method.config.tau * u) + sft;
    case ScoringKind::kFocal: {
      const double g = method.config.focal_gamma;
      const double ls = log_sigmoid(u);
      return -std::exp(g * ls) * ls;
    }
    case ScoringKind::kKtoPaired:
      break;
  }
  return 0.0;
}

LossGrad unified_grad(const MethodSpec& method, const ScoredInstance& scored, double margin,
                      double kto_z_ref) {
  require_inputs(method, scored);
  LossGrad out;
  out.loss = unified_loss(method, scored, margin, kto_z_ref);
  if (method.margin_defined()) out.margin_used = margin;

  if (method.scoring_m == ScoringKind::kKtoPaired) {
    const auto [sw, sl] = kto_sides(method, scored, kto_z_ref);
    const double beta = method.config.beta;
    out.d_logp_w = -beta * method.config.lambda_w * sw * (1.0 - sw);
    out.d_logp_l = beta * method.config.lambda_l * sl * (1.0 - sl);
    out.d_theta_magnitude = 1.0;  // m is the identity
    return out;
  }

  const double u = instance_score(method, scored) - margin;
  const double hw = method.transform_hw.slope(scored.instance.chosen_length);
  const double hl = method.transform_hl.slope(scored.instance.rejected_length);
  switch (method.scoring_m) {
    case ScoringKind::kLogisticLog: {
      const double d = sigmoid(-u);  // sigma(gamma - r)
      out.d_theta_magnitude = d;
      out.d_logp_w = -hw * d - method.aux_lambda;
      out.d_logp_l = hl * d;
      break;
    }
    case ScoringKind::kSquared: {
      out.d_theta_magnitude = 2.0 * u;
      out.d_logp_w = 2.0 * u * hw;
      out.d_logp_l = -2.0 * u * hl;
      break;
    }
    case ScoringKind::kHinge: {
      const double tau = method.config.tau;
      const double arg = 1.0 - tau * u;
      if (arg > 0.0) {
        out.d_theta_magnitude = -tau;
        out.d_logp_w = -tau * hw;
        out.d_logp_l = tau * hl;
      } else if (arg == 0.0) {
        out.at_hinge_kink = true;  // subgradient 0 at the kink
      }
      out.d_logp_w -= method.aux_lambda;
      break;
    }
    case ScoringKind::kFocal: {
      const double g = method.config.focal_gamma;
      const double s = sigmoid(u);
      const double d = std::exp(g * log_sigmoid(u)) * (1.0 - s) * (g * log_sigmoid(u) + 1.0);
      out.d_theta_magnitude = d;
      out.d_logp_w = -hw * d;
      out.d_logp_l = hl * d;
      break;
    }
    case ScoringKind::kKtoPaired:
      break;
  }
  return out;
}

double alpha_dpo_gap(const MethodSpec& method, const ScoredInstance& scored) {
  require_inputs(method, scored);
  return method.config.beta *
         ((scored.logp_chosen - scored.logp_rejected) - ref_ratio(scored));
}

BatchEvaluation evaluate_batch(const MethodSpec& method, std::span<const ScoredInstance> batch,
                               const std::optional<NormStats>& alpha_stats) {
  if (batch.empty()) throw ValidationError("empty batch");
  BatchEvaluation out;
  out.margins.resize(batch.size(), 0.0);

  switch (method.margin_source) {
    case MarginSource::kAmapoAdaptive: {
      std::vector<double> r(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) r[i] = instance_score(method, batch[i]);
      const AdaptiveMarginBatch margins =
          compute_adaptive_margins(r, method.config.beta, method.config.clamp_mu_r);
      out.margins = margins.scaled_margins;
      out.stats = margins.stats;
      break;
    }
    case MarginSource::kAlphaAdaptive: {
      std::vector<double> gaps(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) gaps[i] = alpha_dpo_gap(method, batch[i]);
      NormStats ns;
      if (alpha_stats.has_value()) {
        ns = *alpha_stats;
      } else {
        const BatchStats bs = batch_stats(gaps);
        ns = NormStats{bs.mu_r, bs.sigma_r};
      }
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double z = ns.sigma < 1e-8 ? 0.0 : (gaps[i] - ns.mu) / ns.sigma;
        out.margins[i] = method.config.gamma_const + method.config.alpha * z;
      }
      break;
    }
    case MarginSource::kNone: {
      if (method.name == Method::kKto) {
        double acc = 0.0;
        for (const ScoredInstance& s : batch) {
          require_inputs(method, s);
          acc += method.config.beta * (s.logp_rejected - *s.instance.ref_logp_rejected);
        }
        out.z_ref = std::max(0.0, acc / static_cast<double>(batch.size()));
      }
      break;
    }
    default: {
      for (std::size_t i = 0; i < batch.size(); ++i)
        out.margins[i] = method_margin(method, batch[i]);
      break;
    }
  }

  out.grads.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    out.grads.push_back(unified_grad(method, batch[i], out.margins[i], out.z_ref));
  return out;
}

}  // namespace prefopt
