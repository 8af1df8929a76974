#include "prefopt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "prefopt/amapo.hpp"
#include "prefopt/io.hpp"

namespace prefopt {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

const char* to_string(FeatureMap::Kind kind) {
  switch (kind) {
    case FeatureMap::Kind::kHadamardPlusResponse: return "hadamard_plus_response";
  }
  return "hadamard_plus_response";
}

FeatureMap::Kind feature_map_kind_from_string(const std::string& s) {
  if (s == "hadamard_plus_response") return FeatureMap::Kind::kHadamardPlusResponse;
  throw ValidationError("unknown feature map '" + s + "'");
}

std::vector<double> FeatureMap::apply(std::span<const double> prompt,
                                      std::span<const double> response) const {
  if (static_cast<int>(prompt.size()) != feature_dim ||
      static_cast<int>(response.size()) != feature_dim)
    throw ValidationError("feature vectors must share dimension");
  std::vector<double> phi(static_cast<std::size_t>(weight_dim()));
  for (int i = 0; i < feature_dim; ++i) {
    phi[static_cast<std::size_t>(i)] = prompt[static_cast<std::size_t>(i)] *
                                       response[static_cast<std::size_t>(i)];
    phi[static_cast<std::size_t>(feature_dim + i)] = response[static_cast<std::size_t>(i)];
  }
  return phi;
}

double PolicyModel::score(std::span<const double> prompt,
                          std::span<const double> response) const {
  return dot(weights, feature_map.apply(prompt, response));
}

double policy_logprob(const PolicyModel& model, std::span<const double> prompt,
                      std::span<const double> response,
                      std::span<const std::vector<double>> candidate_set) {
  std::ptrdiff_t index = -1;
  for (std::size_t i = 0; i < candidate_set.size(); ++i) {
    if (candidate_set[i].size() == response.size() &&
        std::equal(response.begin(), response.end(), candidate_set[i].begin())) {
      index = static_cast<std::ptrdiff_t>(i);
      break;
    }
  }
  if (index < 0) throw ValidationError("unknown candidate");
  std::vector<double> scores(candidate_set.size());
  for (std::size_t i = 0; i < candidate_set.size(); ++i)
    scores[i] = model.score(prompt, candidate_set[i]);
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m);
  return scores[static_cast<std::size_t>(index)] - (m + std::log(z));
}

std::pair<double, double> pair_logprobs(const PolicyModel& model,
                                        const PreferenceInstance& instance) {
  const double sw = model.score(instance.prompt_features, instance.chosen_features);
  const double sl = model.score(instance.prompt_features, instance.rejected_features);
  const double m = std::max(sw, sl);
  const double lse = m + std::log(std::exp(sw - m) + std::exp(sl - m));
  return {sw - lse, sl - lse};
}

std::vector<double> param_gradient(const PolicyModel& model, const PreferenceInstance& instance,
                                   double d_logp_w, double d_logp_l) {
  const FeatureMap& fm = model.feature_map;
  const std::vector<double> phi_w = fm.apply(instance.prompt_features, instance.chosen_features);
  const std::vector<double> phi_l = fm.apply(instance.prompt_features, instance.rejected_features);
  const double sw = dot(model.weights, phi_w);
  const double sl = dot(model.weights, phi_l);
  const double m = std::max(sw, sl);
  const double ew = std::exp(sw - m);
  const double el = std::exp(sl - m);
  const double pw = ew / (ew + el);
  const double pl = el / (ew + el);
  std::vector<double> grad(phi_w.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double mean_phi = pw * phi_w[i] + pl * phi_l[i];
    grad[i] = d_logp_w * (phi_w[i] - mean_phi) + d_logp_l * (phi_l[i] - mean_phi);
  }
  return grad;
}

void adam_step(AdamState& state, std::span<const double> gradient, double lr,
               std::span<double> params) {
  if (state.m.size() != gradient.size() || params.size() != gradient.size())
    throw ValidationError("state dimensions must match gradient");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * gradient[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * gradient[i] * gradient[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

double cosine_warmup_lr(double base_lr, std::int64_t step, std::int64_t total_steps,
                        double warmup_fraction) {
  if (total_steps <= 0) return base_lr;
  const auto warmup = static_cast<std::int64_t>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::int64_t rest = std::max<std::int64_t>(1, total_steps - warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(rest);
  return base_lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

std::vector<ScoredInstance> score_split(const PolicyModel& model, const ReferenceModel& reference,
                                        std::span<const PreferenceInstance> instances) {
  std::vector<ScoredInstance> out;
  out.reserve(instances.size());
  for (const PreferenceInstance& inst : instances) {
    ScoredInstance s;
    s.instance = inst;
    const auto [lw, ll] = pair_logprobs(model, inst);
    s.logp_chosen = lw;
    s.logp_rejected = ll;
    if (!inst.has_ref_logp()) {
      const auto [rw, rl] = pair_logprobs(reference.model(), inst);
      s.instance.ref_logp_chosen = rw;
      s.instance.ref_logp_rejected = rl;
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

// Per-split evaluation row: metrics over batch_size chunks in split order so
// batch-adaptive margins are resolved the same way training resolves them.
ReportRow build_report_row(int epoch, const std::string& split_name, const MethodSpec& spec,
                           std::span<const ScoredInstance> scored, int batch_size) {
  ReportRow row;
  row.epoch = epoch;
  row.split = split_name;
  row.ranking_accuracy = ranking_accuracy(scored, AccuracyMode::kRaw);

  double loss_sum = 0.0;
  double d_sum = 0.0;
  long cases[4] = {0, 0, 0, 0};
  double mis_sum = 0.0, cor_sum = 0.0;
  long mis_n = 0, cor_n = 0;
  std::vector<double> margins_for_corr;
  std::vector<double> oracle_gaps;
  bool all_oracle = true;

  for (std::size_t off = 0; off < scored.size(); off += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                                scored.size() - off);
    const auto batch = scored.subspan(off, n);
    const BatchEvaluation ev = evaluate_batch(spec, batch);
    for (std::size_t i = 0; i < n; ++i) {
      const LossGrad& g = ev.grads[i];
      loss_sum += g.loss;
      d_sum += g.d_theta_magnitude;
      const double r = instance_score(spec, batch[i]);
      if (r > 0.0) {
        cor_sum += g.d_theta_magnitude;
        ++cor_n;
      } else {
        mis_sum += g.d_theta_magnitude;
        ++mis_n;
      }
      if (g.margin_used.has_value()) {
        cases[static_cast<std::size_t>(classify_case(r, *g.margin_used).case_id - 1)] += 1;
        margins_for_corr.push_back(*g.margin_used);
        if (const OracleMargin om = oracle_margin(batch[i].instance); om.available) {
          oracle_gaps.push_back(om.gamma_star);
        } else {
          all_oracle = false;
        }
      }
    }
  }

  const double n = static_cast<double>(scored.size());
  row.mean_loss = loss_sum / n;
  row.mean_d_theta = d_sum / n;
  if (spec.margin_defined()) {
    for (int c = 0; c < 4; ++c) row.case_counts[c] = cases[c];
  }
  if (mis_n > 0) row.d_theta_misranked = mis_sum / static_cast<double>(mis_n);
  if (cor_n > 0) row.d_theta_correct = cor_sum / static_cast<double>(cor_n);
  if (spec.margin_defined() && all_oracle && !margins_for_corr.empty())
    row.margin_oracle_spearman = spearman(margins_for_corr, oracle_gaps);
  return row;
}

struct SplitView {
  std::string name;
  std::vector<PreferenceInstance> instances;
};

std::vector<SplitView> split_views(std::span<const PreferenceInstance> dataset) {
  std::vector<SplitView> views;
  for (SplitTag tag : {SplitTag::kId, SplitTag::kPromptOod, SplitTag::kResponseOod,
                       SplitTag::kMutualOod}) {
    SplitView v;
    v.name = to_string(tag);
    for (const PreferenceInstance& inst : dataset)
      if (inst.split_tag == tag) v.instances.push_back(inst);
    if (!v.instances.empty()) views.push_back(std::move(v));
  }
  return views;
}

void append_epoch_rows(RunReport& report, int epoch, const MethodSpec& spec,
                       const PolicyModel& model, const ReferenceModel& reference,
                       const std::vector<SplitView>& views, int batch_size) {
  for (const SplitView& v : views) {
    const auto scored = score_split(model, reference, v.instances);
    report.rows.push_back(build_report_row(epoch, v.name, spec, scored, batch_size));
  }
}

void append_histograms(RunReport& report, const MethodSpec& spec, const PolicyModel& model,
                       const ReferenceModel& reference, const std::vector<SplitView>& views) {
  for (const SplitView& v : views) {
    const auto scored = score_split(model, reference, v.instances);
    std::vector<double> r_values, prob_diff, chosen_logp;
    for (const ScoredInstance& s : scored) {
      r_values.push_back(instance_score(spec, s));
      prob_diff.push_back(std::exp(s.logp_chosen) - std::exp(s.logp_rejected));
      chosen_logp.push_back(s.logp_chosen);
    }
    report.histograms.push_back(make_histogram(v.name, "r", r_values));
    report.histograms.push_back(make_histogram(v.name, "prob_diff", prob_diff));
    report.histograms.push_back(make_histogram(v.name, "chosen_logp", chosen_logp));
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const PreferenceInstance> dataset,
                  const EpochObserver& observer) {
  if (dataset.empty()) throw ValidationError("empty dataset");
  if (config.learning_rate <= 0.0) throw ValidationError("learning_rate must be > 0");
  if (config.epochs < 0) throw ValidationError("epochs must be >= 0");
  if (config.batch_size < 1) throw ValidationError("batch_size must be >= 1");

  const MethodSpec spec = registry_lookup(config.method, config.method_config);
  const auto views = split_views(dataset);
  std::vector<PreferenceInstance> train_set;
  for (const PreferenceInstance& inst : dataset) {
    inst.validate();
    if (inst.split_tag == SplitTag::kId) train_set.push_back(inst);
  }
  if (train_set.empty()) throw ValidationError("dataset has no id-split instances to train on");
  if (static_cast<std::size_t>(config.batch_size) > train_set.size())
    throw ValidationError("batch_size exceeds dataset size");

  const int dim = static_cast<int>(train_set.front().prompt_features.size());
  for (const PreferenceInstance& inst : dataset)
    if (static_cast<int>(inst.prompt_features.size()) != dim)
      throw ValidationError("feature vectors must share dimension");

  TrainResult result;
  result.model.feature_map = FeatureMap{FeatureMap::Kind::kHadamardPlusResponse, dim};
  result.model.weights.resize(static_cast<std::size_t>(result.model.feature_map.weight_dim()));
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> init(0.0, 0.1);
  for (double& w : result.model.weights) w = init(rng);
  result.reference = ReferenceModel(result.model);

  append_epoch_rows(result.report, 0, spec, result.model, result.reference, views,
                    config.batch_size);
  if (observer) observer(0, result.model, result.reference);
  if (config.epochs == 0) {
    append_histograms(result.report, spec, result.model, result.reference, views);
    return result;
  }

  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
  const std::int64_t n_batches =
      static_cast<std::int64_t>((train_set.size() + batch_size - 1) / batch_size);
  const std::int64_t total_steps = static_cast<std::int64_t>(config.epochs) * n_batches;
  AdamState adam(result.model.weights.size(), config.adam_beta1, config.adam_beta2,
                 config.adam_eps);
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::optional<NormStats> alpha_stats;
    if (spec.margin_source == MarginSource::kAlphaAdaptive && config.alpha_dataset_znorm) {
      const auto scored = score_split(result.model, result.reference, train_set);
      std::vector<double> gaps(scored.size());
      for (std::size_t i = 0; i < scored.size(); ++i) gaps[i] = alpha_dpo_gap(spec, scored[i]);
      const BatchStats bs = batch_stats(gaps);
      alpha_stats = NormStats{bs.mu_r, bs.sigma_r};
    }

    for (std::size_t off = 0; off < train_set.size(); off += batch_size) {
      const std::size_t n = std::min(batch_size, train_set.size() - off);
      const auto scored = score_split(
          result.model, result.reference,
          std::span<const PreferenceInstance>(train_set.data() + off, n));
      const BatchEvaluation ev = evaluate_batch(spec, scored, alpha_stats);

      double loss_sum = 0.0;
      std::vector<double> grad(result.model.weights.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        loss_sum += ev.grads[i].loss;
        const auto g = param_gradient(result.model, scored[i].instance, ev.grads[i].d_logp_w,
                                      ev.grads[i].d_logp_l);
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g[k];
      }
      if (!std::isfinite(loss_sum))
        throw DivergenceError(static_cast<std::size_t>(step));
      for (double& g : grad) g /= static_cast<double>(n);

      const double lr = config.cosine_schedule
                            ? cosine_warmup_lr(config.learning_rate, step, total_steps,
                                               config.warmup_fraction)
                            : config.learning_rate;
      adam_step(adam, grad, lr, result.model.weights);
      ++step;
    }

    append_epoch_rows(result.report, epoch, spec, result.model, result.reference, views,
                      config.batch_size);
    if (observer) observer(epoch, result.model, result.reference);
  }

  append_histograms(result.report, spec, result.model, result.reference, views);
  return result;
}

namespace {

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["method"] = c.method;
  j["beta"] = c.method_config.beta;
  j["gamma_const"] = c.method_config.gamma_const;
  j["tau"] = c.method_config.tau;
  j["lambda_sft"] = c.method_config.lambda_sft;
  j["lambda_w"] = c.method_config.lambda_w;
  j["lambda_l"] = c.method_config.lambda_l;
  j["focal_gamma"] = c.method_config.focal_gamma;
  j["alpha"] = c.method_config.alpha;
  j["delta_r_from_oracle"] = c.method_config.delta_r_from_oracle;
  j["clamp_mu_r"] = c.method_config.clamp_mu_r;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["warmup_fraction"] = c.warmup_fraction;
  j["cosine_schedule"] = c.cosine_schedule;
  j["alpha_dataset_znorm"] = c.alpha_dataset_znorm;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.method = j.at("method").get<std::string>();
  c.method_config.beta = j.at("beta").get<double>();
  c.method_config.gamma_const = j.at("gamma_const").get<double>();
  c.method_config.tau = j.at("tau").get<double>();
  c.method_config.lambda_sft = j.at("lambda_sft").get<double>();
  c.method_config.lambda_w = j.at("lambda_w").get<double>();
  c.method_config.lambda_l = j.at("lambda_l").get<double>();
  c.method_config.focal_gamma = j.at("focal_gamma").get<double>();
  c.method_config.alpha = j.at("alpha").get<double>();
  c.method_config.delta_r_from_oracle = j.at("delta_r_from_oracle").get<bool>();
  c.method_config.clamp_mu_r = j.at("clamp_mu_r").get<bool>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.warmup_fraction = j.at("warmup_fraction").get<double>();
  c.cosine_schedule = j.at("cosine_schedule").get<bool>();
  c.alpha_dataset_znorm = j.at("alpha_dataset_znorm").get<bool>();
  return c;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["config"] = config_to_json(ckpt.config);
  j["feature_dim"] = ckpt.model.feature_map.feature_dim;
  j["feature_map"] = to_string(ckpt.model.feature_map.kind);
  j["reference_weights"] = ckpt.reference.weights();
  j["weights"] = ckpt.model.weights;
  atomic_write(path, j.dump(2) + "\n");
}

Checkpoint read_checkpoint(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid checkpoint: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(j.at("config"));
    FeatureMap fm;
    fm.kind = feature_map_kind_from_string(j.at("feature_map").get<std::string>());
    fm.feature_dim = j.at("feature_dim").get<int>();
    ckpt.model.feature_map = fm;
    ckpt.model.weights = j.at("weights").get<std::vector<double>>();
    PolicyModel ref;
    ref.feature_map = fm;
    ref.weights = j.at("reference_weights").get<std::vector<double>>();
    ckpt.reference = ReferenceModel(std::move(ref));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid checkpoint: ") + e.what());
  }
  if (ckpt.model.weights.size() != static_cast<std::size_t>(ckpt.model.feature_map.weight_dim()))
    throw ValidationError("checkpoint weight dimension mismatch");
  return ckpt;
}

}  // namespace prefopt
