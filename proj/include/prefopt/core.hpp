#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefopt {

// Domain validation failure (bad argument, missing field, broken invariant).
// The CLI maps this to the E_VALIDATE prefix and exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File-format failure while reading datasets/dumps/reports; carries the
// offending line when known. Maps to E_PARSE.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Non-finite loss during training. Maps to E_DIVERGE.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(std::size_t batch_index)
      : std::runtime_error("divergence in batch " + std::to_string(batch_index)),
        batch_index_(batch_index) {}
  std::size_t batch_index() const { return batch_index_; }

 private:
  std::size_t batch_index_;
};

enum class SplitTag { kId, kPromptOod, kResponseOod, kMutualOod };

const char* to_string(SplitTag tag);
SplitTag split_tag_from_string(const std::string& s);

// One (prompt, chosen, rejected) preference triple. Lengths and log-probs are
// abstract scalars; feature vectors stand in for the texts.
struct PreferenceInstance {
  std::string id;
  std::vector<double> prompt_features;
  std::vector<double> chosen_features;
  std::vector<double> rejected_features;
  int chosen_length = 1;
  int rejected_length = 1;
  std::optional<double> ref_logp_chosen;
  std::optional<double> ref_logp_rejected;
  std::optional<double> oracle_reward_chosen;
  std::optional<double> oracle_reward_rejected;
  SplitTag split_tag = SplitTag::kId;

  bool has_ref_logp() const { return ref_logp_chosen.has_value() && ref_logp_rejected.has_value(); }
  bool has_oracle_rewards() const {
    return oracle_reward_chosen.has_value() && oracle_reward_rejected.has_value();
  }
  // Throws ValidationError if the type invariants are broken.
  void validate() const;
};

// A preference instance with current-policy log-probabilities attached.
struct ScoredInstance {
  PreferenceInstance instance;
  double logp_chosen = 0.0;
  double logp_rejected = 0.0;
};

// Per-batch mean and population standard deviation of the ranking scores.
struct BatchStats {
  double mu_r = 0.0;
  double sigma_r = 0.0;
  std::size_t count = 0;
};

double sigmoid(double x);

/// Numerically stable log σ(x); no overflow for |x| up to 1e6.
/// Throws ValidationError on non-finite input.
double log_sigmoid(double x);

/// Mean and population (divide-by-N) standard deviation.
/// Throws ValidationError on an empty list.
BatchStats batch_stats(std::span<const double> r_values);

/// exp(-logp / length), the geometric-mean inverse likelihood per token.
/// Throws ValidationError when length < 1 or logp is non-finite.
double perplexity(double logp, int length);

}  // namespace prefopt
