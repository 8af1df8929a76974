#include "prefopt/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "prefopt/io.hpp"

namespace prefopt {

CaseLabel classify_case(double r, double gamma) {
  if (!std::isfinite(r) || !std::isfinite(gamma)) throw ValidationError("non-finite argument");
  CaseLabel label;
  label.correctly_ranked = r > 0.0;
  label.above_margin = r >= gamma;
  if (label.correctly_ranked) {
    label.case_id = label.above_margin ? 1 : 2;
  } else {
    label.case_id = label.above_margin ? 3 : 4;
  }
  return label;
}

double ranking_accuracy(std::span<const ScoredInstance> scored, AccuracyMode mode) {
  if (scored.empty()) throw ValidationError("empty dataset");
  long correct = 0;
  for (const ScoredInstance& s : scored) {
    bool hit = false;
    if (mode == AccuracyMode::kRaw) {
      hit = s.logp_chosen > s.logp_rejected;
    } else {
      hit = s.logp_chosen / s.instance.chosen_length -
                s.logp_rejected / s.instance.rejected_length >
            0.0;
    }
    if (hit) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scored.size());
}

GradientAllocation gradient_allocation(std::span<const ScoredInstance> batch,
                                       const MethodSpec& method) {
  if (batch.empty()) throw ValidationError("empty batch");
  const BatchEvaluation ev = evaluate_batch(method, batch);
  double mis_sum = 0.0, cor_sum = 0.0;
  long mis_n = 0, cor_n = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double r = instance_score(method, batch[i]);
    if (r > 0.0) {
      cor_sum += ev.grads[i].d_theta_magnitude;
      ++cor_n;
    } else {
      mis_sum += ev.grads[i].d_theta_magnitude;
      ++mis_n;
    }
  }
  GradientAllocation out;
  if (mis_n > 0) out.misranked_mean = mis_sum / static_cast<double>(mis_n);
  if (cor_n > 0) out.correct_mean = cor_sum / static_cast<double>(cor_n);
  return out;
}

namespace {

struct Trial {
  MethodSpec spec;
  ScoredInstance scored;
};

Trial random_trial(Method method, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> logp(-6.0, -0.05);
  std::uniform_real_distribution<double> beta(0.2, 3.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> length(1, 30);
  std::normal_distribution<double> reward(0.0, 1.0);

  MethodConfig cfg;
  cfg.beta = beta(rng);
  cfg.gamma_const = 1.5 * unit(rng);
  cfg.tau = 0.3 + 1.7 * unit(rng);
  cfg.lambda_sft = 2.0 * unit(rng);
  cfg.lambda_w = 0.5 + unit(rng);
  cfg.lambda_l = 0.5 + unit(rng);
  cfg.focal_gamma = 0.2 + 1.8 * unit(rng);
  cfg.alpha = 0.01 + 0.19 * unit(rng);

  Trial t;
  t.spec = registry_lookup(method, cfg);
  t.scored.logp_chosen = logp(rng);
  t.scored.logp_rejected = logp(rng);
  t.scored.instance.id = "trial";
  t.scored.instance.chosen_length = length(rng);
  t.scored.instance.rejected_length = length(rng);
  t.scored.instance.ref_logp_chosen = logp(rng);
  t.scored.instance.ref_logp_rejected = logp(rng);
  t.scored.instance.oracle_reward_chosen = reward(rng);
  t.scored.instance.oracle_reward_rejected = reward(rng);
  return t;
}

std::string serialize_trial(const Trial& t, double margin) {
  nlohmann::json j;
  j["method"] = to_string(t.spec.name);
  j["beta"] = t.spec.config.beta;
  j["logp_chosen"] = t.scored.logp_chosen;
  j["logp_rejected"] = t.scored.logp_rejected;
  j["ref_logp_chosen"] = *t.scored.instance.ref_logp_chosen;
  j["ref_logp_rejected"] = *t.scored.instance.ref_logp_rejected;
  j["chosen_length"] = t.scored.instance.chosen_length;
  j["rejected_length"] = t.scored.instance.rejected_length;
  j["margin"] = margin;
  return j.dump();
}

double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
}

// True when a SLiC trial sits within one FD step of the hinge kink, where
// central differences straddle the non-differentiable point.
bool near_hinge_kink(const Trial& t, double margin, double step) {
  if (t.spec.scoring_m != ScoringKind::kHinge) return false;
  const double u = instance_score(t.spec, t.scored) - margin;
  const double arg = 1.0 - t.spec.config.tau * u;
  return std::abs(arg) <= 2.0 * t.spec.config.tau * step;
}

}  // namespace

GradCheckResult grad_check(Method method, int trials, double tol, std::uint64_t seed) {
  if (trials < 1) throw ValidationError("trials must be >= 1");
  constexpr double kStep = 1e-5;
  GradCheckResult result;
  result.method = to_string(method);
  result.trials = trials;
  std::mt19937_64 rng(seed);

  for (int n = 0; n < trials; ++n) {
    const Trial t = random_trial(method, rng);
    // Freeze margins and batch statistics from a single-instance batch.
    const std::span<const ScoredInstance> batch(&t.scored, 1);
    const BatchEvaluation base = evaluate_batch(t.spec, batch);
    const double margin = base.margins[0];
    const double z_ref = base.z_ref;
    if (base.grads[0].at_hinge_kink || near_hinge_kink(t, margin, kStep)) {
      ++result.kink_skips;
      continue;
    }

    const LossGrad analytic = base.grads[0];
    double fd[2];
    for (int coord = 0; coord < 2; ++coord) {
      ScoredInstance plus = t.scored, minus = t.scored;
      double& up = coord == 0 ? plus.logp_chosen : plus.logp_rejected;
      double& dn = coord == 0 ? minus.logp_chosen : minus.logp_rejected;
      up += kStep;
      dn -= kStep;
      fd[coord] = (unified_loss(t.spec, plus, margin, z_ref) -
                   unified_loss(t.spec, minus, margin, z_ref)) /
                  (2.0 * kStep);
    }

    const double err =
        std::max(rel_err(analytic.d_logp_w, fd[0]), rel_err(analytic.d_logp_l, fd[1]));
    result.max_rel_err = std::max(result.max_rel_err, err);
    ++result.compared;
    if (err > tol) {
      ++result.failures;
      if (result.first_failure.empty()) result.first_failure = serialize_trial(t, margin);
    }
  }
  return result;
}

std::vector<GradCheckResult> grad_check_all(int trials, double tol, std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  const auto names = method_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    out.push_back(grad_check(static_cast<Method>(i), trials, tol, seed + i));
  return out;
}

double skewness(std::span<const double> values) {
  if (values.empty()) throw ValidationError("empty batch");
  const BatchStats st = batch_stats(values);
  if (st.sigma_r == 0.0) return 0.0;
  double third = 0.0;
  for (double v : values) {
    const double d = (v - st.mu_r) / st.sigma_r;
    third += d * d * d;
  }
  return third / static_cast<double>(values.size());
}

HistogramSnapshot make_histogram(std::string split, std::string quantity,
                                 std::span<const double> values, int bins) {
  if (values.empty() || bins < 1) throw ValidationError("empty histogram input");
  HistogramSnapshot h;
  h.split = std::move(split);
  h.quantity = std::move(quantity);
  h.skewness = skewness(values);
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (lo == hi) {  // degenerate range: one centered unit-wide bin span
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + width * i;
  h.edges.back() = hi;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    auto idx = static_cast<long>((v - lo) / width);
    idx = std::clamp<long>(idx, 0, bins - 1);
    h.counts[static_cast<std::size_t>(idx)] += 1;
  }
  return h;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("size mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;

  const auto ranks = [](std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      return x[i] < x[j];
    });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    return rank;
  };

  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  double mu_a = 0.0, mu_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu_a += ra[i];
    mu_b += rb[i];
  }
  mu_a /= static_cast<double>(n);
  mu_b /= static_cast<double>(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (ra[i] - mu_a) * (rb[i] - mu_b);
    va += (ra[i] - mu_a) * (ra[i] - mu_a);
    vb += (rb[i] - mu_b) * (rb[i] - mu_b);
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return cov / std::sqrt(va * vb);
}

namespace {

std::string opt_str(const std::optional<double>& v) {
  return v.has_value() ? format_double(*v) : std::string();
}

std::string opt_str(const std::optional<long>& v) {
  return v.has_value() ? std::to_string(*v) : std::string();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

void write_report_csv(const std::string& path, std::span<const ReportRow> rows) {
  std::string out =
      "epoch,split,ranking_accuracy,mean_loss,mean_d_theta,case1,case2,case3,case4,"
      "d_theta_misranked,d_theta_correct,margin_oracle_spearman\n";
  for (const ReportRow& r : rows) {
    out += std::to_string(r.epoch);
    out += ',' + r.split;
    out += ',' + format_double(r.ranking_accuracy);
    out += ',' + format_double(r.mean_loss);
    out += ',' + format_double(r.mean_d_theta);
    for (const auto& c : r.case_counts) out += ',' + opt_str(c);
    out += ',' + opt_str(r.d_theta_misranked);
    out += ',' + opt_str(r.d_theta_correct);
    out += ',' + opt_str(r.margin_oracle_spearman);
    out += '\n';
  }
  atomic_write(path, out);
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line.rfind("epoch,split,", 0) != 0) throw ParseError("bad report header", 1);
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 12) throw ParseError("expected 12 columns", line_no);
    ReportRow r;
    try {
      r.epoch = std::stoi(cells[0]);
      r.split = cells[1];
      r.ranking_accuracy = parse_double(cells[2]);
      r.mean_loss = parse_double(cells[3]);
      r.mean_d_theta = parse_double(cells[4]);
      for (int c = 0; c < 4; ++c)
        if (!cells[static_cast<std::size_t>(5 + c)].empty())
          r.case_counts[c] = std::stol(cells[static_cast<std::size_t>(5 + c)]);
      if (!cells[9].empty()) r.d_theta_misranked = parse_double(cells[9]);
      if (!cells[10].empty()) r.d_theta_correct = parse_double(cells[10]);
      if (!cells[11].empty()) r.margin_oracle_spearman = parse_double(cells[11]);
    } catch (const std::logic_error&) {
      throw ParseError("invalid report cell", line_no);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_histogram_csv(const std::string& path, std::span<const HistogramSnapshot> snapshots) {
  std::string out = "split,quantity,skewness,bin_lo,bin_hi,count\n";
  for (const HistogramSnapshot& h : snapshots) {
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      out += h.split + ',' + h.quantity;
      out += ',' + format_double(h.skewness);
      out += ',' + format_double(h.edges[i]);
      out += ',' + format_double(h.edges[i + 1]);
      out += ',' + std::to_string(h.counts[i]);
      out += '\n';
    }
  }
  atomic_write(path, out);
}

}  // namespace prefopt
