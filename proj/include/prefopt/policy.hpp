#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prefopt/core.hpp"
#include "prefopt/diagnostics.hpp"
#include "prefopt/methods.hpp"

namespace prefopt {

// phi(x,y): elementwise product of prompt and response features plus a
// response-only block, so the linear scorer can fit Bradley-Terry preferences
// while keeping grad log pi closed-form.
struct FeatureMap {
  enum class Kind { kHadamardPlusResponse } kind = Kind::kHadamardPlusResponse;
  int feature_dim = 0;

  int weight_dim() const { return 2 * feature_dim; }
  std::vector<double> apply(std::span<const double> prompt,
                            std::span<const double> response) const;
};

const char* to_string(FeatureMap::Kind kind);
FeatureMap::Kind feature_map_kind_from_string(const std::string& s);

// Linear scorer s(x,y) = w . phi(x,y); log pi(y|x) is the softmax of the
// scores over an explicit candidate set.
struct PolicyModel {
  std::vector<double> weights;
  FeatureMap feature_map;

  double score(std::span<const double> prompt, std::span<const double> response) const;
};

// Frozen copy of the policy at initialization; never updated after training
// starts.
class ReferenceModel {
 public:
  ReferenceModel() = default;
  explicit ReferenceModel(PolicyModel model) : model_(std::move(model)) {}
  const PolicyModel& model() const { return model_; }
  const std::vector<double>& weights() const { return model_.weights; }

 private:
  PolicyModel model_;
};

/// log pi(response|prompt) under a softmax over candidate_set. The response
/// must be a member of the candidate set.
double policy_logprob(const PolicyModel& model, std::span<const double> prompt,
                      std::span<const double> response,
                      std::span<const std::vector<double>> candidate_set);

/// (log pi_w, log pi_l) over the instance's two-candidate set.
std::pair<double, double> pair_logprobs(const PolicyModel& model,
                                        const PreferenceInstance& instance);

/// Chain rule from the loss partials to scorer weights:
/// d_logp_w * grad log pi(y_w|x) + d_logp_l * grad log pi(y_l|x), with
/// grad log pi(y|x) = phi(x,y) - sum_y' pi(y'|x) phi(x,y').
std::vector<double> param_gradient(const PolicyModel& model, const PreferenceInstance& instance,
                                   double d_logp_w, double d_logp_l);

// Bias-corrected Adam state over a flat parameter vector.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t dim = 0, double b1 = 0.9, double b2 = 0.999, double e = 1e-8)
      : m(dim, 0.0), v(dim, 0.0), beta1(b1), beta2(b2), eps(e) {}
};

/// One bias-corrected Adam update of params in place.
void adam_step(AdamState& state, std::span<const double> gradient, double lr,
               std::span<double> params);

/// Cosine learning-rate schedule with warmup (fraction of total steps).
double cosine_warmup_lr(double base_lr, std::int64_t step, std::int64_t total_steps,
                        double warmup_fraction = 0.1);

struct TrainConfig {
  std::string method = "amapo";
  MethodConfig method_config;
  double learning_rate = 1e-2;  // toy-regime default, exposed as a flag
  int epochs = 1;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_fraction = 0.1;
  bool cosine_schedule = true;
  bool alpha_dataset_znorm = false;  // alpha-DPO: dataset-level M* statistics
};

struct TrainResult {
  PolicyModel model;
  ReferenceModel reference;
  RunReport report;
};

/// Called after the epoch-0 snapshot and after every epoch with the current
/// policy state.
using EpochObserver = std::function<void(int epoch, const PolicyModel& model,
                                         const ReferenceModel& reference)>;

/// Deterministic full training run over the id split of `dataset`, with
/// per-epoch evaluation rows for every split present. Batches are consecutive
/// dataset-order chunks. Throws DivergenceError when a batch loss goes
/// non-finite.
TrainResult train(const TrainConfig& config, std::span<const PreferenceInstance> dataset,
                  const EpochObserver& observer = {});

/// Scores every instance of a split with the policy, filling reference
/// log-probs from `reference` where the instance lacks them.
std::vector<ScoredInstance> score_split(const PolicyModel& model, const ReferenceModel& reference,
                                        std::span<const PreferenceInstance> instances);

// Checkpoint I/O: flat JSON record of weights, reference weights, feature-map
// descriptor, train config and seed. write(read(file)) is byte-identical.
struct Checkpoint {
  PolicyModel model;
  ReferenceModel reference;
  TrainConfig config;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace prefopt
