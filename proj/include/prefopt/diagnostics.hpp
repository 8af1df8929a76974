#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefopt/methods.hpp"

namespace prefopt {

// One cell of the four-way (ranking correctness x margin position) taxonomy.
// Case 1: correct, at/above margin (mild update, ideal).
// Case 2: correct, below margin (aggressive update, overfitting).
// Case 3: incorrect, at/above margin (mild update, underfitting).
// Case 4: incorrect, below margin (aggressive update, ideal).
struct CaseLabel {
  int case_id = 1;
  bool correctly_ranked = false;  // r > 0
  bool above_margin = false;      // r >= gamma
};

/// Boundary conventions: r = gamma counts as above, r = 0 counts as
/// incorrectly ranked.
CaseLabel classify_case(double r, double gamma);

enum class AccuracyMode { kRaw, kLengthNormalized };

/// Fraction of instances whose chosen response is strictly preferred; ties
/// count as incorrect. Throws ValidationError on an empty list.
double ranking_accuracy(std::span<const ScoredInstance> scored, AccuracyMode mode);

// Mean gradient magnitude per ranking partition; a partition with no members
// is reported absent rather than 0.
struct GradientAllocation {
  std::optional<double> misranked_mean;
  std::optional<double> correct_mean;
};

GradientAllocation gradient_allocation(std::span<const ScoredInstance> batch,
                                       const MethodSpec& method);

// Finite-difference check of the analytic partials for one method.
struct GradCheckResult {
  std::string method;
  int trials = 0;
  int compared = 0;
  int kink_skips = 0;
  int failures = 0;
  double max_rel_err = 0.0;
  std::string first_failure;  // serialized offending instance, if any

  bool passed() const { return failures == 0; }
};

/// Compares unified_grad against central differences of unified_loss (step
/// 1e-5, margins and batch statistics frozen) on randomized instances and
/// configs. Relative error uses max(1, |fd|, |analytic|) in the denominator.
/// SLiC trials landing within a step of the hinge kink are flagged and
/// excluded from the tolerance check.
GradCheckResult grad_check(Method method, int trials, double tol, std::uint64_t seed);
std::vector<GradCheckResult> grad_check_all(int trials, double tol, std::uint64_t seed);

// 50 uniform bins over the observed range of one diagnostic quantity, plus
// the population skewness of the underlying values.
struct HistogramSnapshot {
  std::string split;
  std::string quantity;  // "r", "prob_diff", "chosen_logp"
  std::vector<double> edges;  // bins + 1 entries
  std::vector<long> counts;
  double skewness = 0.0;
};

HistogramSnapshot make_histogram(std::string split, std::string quantity,
                                 std::span<const double> values, int bins = 50);

/// Population skewness E[(x - mu)^3] / sigma^3; 0 for a constant sample.
double skewness(std::span<const double> values);

// One evaluation row of a training run.
struct ReportRow {
  int epoch = 0;
  std::string split;
  double ranking_accuracy = 0.0;
  double mean_loss = 0.0;
  double mean_d_theta = 0.0;
  std::optional<long> case_counts[4];  // empty when the margin is undefined
  std::optional<double> d_theta_misranked;
  std::optional<double> d_theta_correct;
  std::optional<double> margin_oracle_spearman;

  bool operator==(const ReportRow&) const = default;
};

struct RunReport {
  std::vector<ReportRow> rows;
  std::vector<HistogramSnapshot> histograms;
};

void write_report_csv(const std::string& path, std::span<const ReportRow> rows);
std::vector<ReportRow> read_report_csv(const std::string& path);
void write_histogram_csv(const std::string& path, std::span<const HistogramSnapshot> snapshots);

// Spearman rank correlation with average ranks for ties; absent when fewer
// than two points or either side has zero rank variance.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

int cli_main(int argc, const char* const* argv);

}  // namespace prefopt
