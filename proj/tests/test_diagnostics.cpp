#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "prefopt/amapo.hpp"
#include "prefopt/diagnostics.hpp"
#include "prefopt/io.hpp"
#include "test_helpers.hpp"

using namespace prefopt;
using namespace prefopt::testutil;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("ranking accuracy basics") {
  std::vector<ScoredInstance> two{make_scored(-1.0, -2.0), make_scored(-2.0, -1.0)};
  CHECK(ranking_accuracy(two, AccuracyMode::kRaw) == 0.5);

  // strict indicator: ties count as incorrect
  std::vector<ScoredInstance> tied{make_scored(-1.0, -1.0), make_scored(-0.3, -0.3)};
  CHECK(ranking_accuracy(tied, AccuracyMode::kRaw) == 0.0);

  CHECK_THROWS_WITH_AS(ranking_accuracy(std::vector<ScoredInstance>{}, AccuracyMode::kRaw),
                       "empty dataset", ValidationError);
}

TEST_CASE("raw and length-normalized accuracy agree on equal lengths") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> logp(-5.0, -0.1);
  std::uniform_int_distribution<int> len(1, 20);
  std::vector<ScoredInstance> batch;
  for (int i = 0; i < 100; ++i) {
    const int l = len(rng);
    batch.push_back(make_scored(logp(rng), logp(rng), l, l));
  }
  CHECK(ranking_accuracy(batch, AccuracyMode::kRaw) ==
        ranking_accuracy(batch, AccuracyMode::kLengthNormalized));
}

TEST_CASE("length-normalized accuracy equals the sign rule for simpo-style scores") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> logp(-5.0, -0.1);
  std::uniform_int_distribution<int> len(1, 20);
  MethodConfig cfg;
  cfg.beta = 2.0;
  const MethodSpec simpo = registry_lookup(Method::kSimpo, cfg);
  std::vector<ScoredInstance> batch;
  for (int i = 0; i < 200; ++i) batch.push_back(make_scored(logp(rng), logp(rng), len(rng), len(rng)));
  long by_sign = 0;
  for (const auto& s : batch)
    if (instance_score(simpo, s) > 0.0) ++by_sign;
  CHECK(ranking_accuracy(batch, AccuracyMode::kLengthNormalized) ==
        static_cast<double>(by_sign) / static_cast<double>(batch.size()));
}

TEST_CASE("case classifier examples and boundaries") {
  CHECK(classify_case(1.0, 0.5).case_id == 1);
  CHECK(classify_case(0.3, 0.5).case_id == 2);   // overfitting arm
  CHECK(classify_case(-0.2, 0.5).case_id == 4);  // aggressive on misranked
  CHECK(classify_case(-0.2, -0.5).case_id == 3); // underfitting arm

  // boundary conventions: r = gamma counts as above, r = 0 as incorrect
  CHECK(classify_case(0.5, 0.5).above_margin);
  CHECK(classify_case(0.5, 0.5).case_id == 1);
  CHECK_FALSE(classify_case(0.0, -1.0).correctly_ranked);
  CHECK(classify_case(0.0, 0.0).case_id == 3);

  CHECK_THROWS_AS(classify_case(std::nan(""), 0.0), ValidationError);
}

TEST_CASE("classifier partitions the plane and matches the logistic magnitude rule") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> dist(-4.0, 4.0);
  MethodConfig cfg;
  cfg.beta = 1.0;
  const MethodSpec simpo = registry_lookup(Method::kSimpo, cfg);
  long counts[4] = {0, 0, 0, 0};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double r = dist(rng);
    const double gamma = dist(rng);
    const CaseLabel label = classify_case(r, gamma);
    counts[label.case_id - 1] += 1;
    // realize (r, gamma) with a simpo instance and check d_theta > 0.5 <=> below margin
    const ScoredInstance s = make_scored_with_r(r);
    const LossGrad g = unified_grad(simpo, s, gamma);
    CHECK((g.d_theta_magnitude > 0.5) == !label.above_margin);
    CHECK((g.d_theta_magnitude <= 0.5) == label.above_margin);
  }
  CHECK(counts[0] + counts[1] + counts[2] + counts[3] == n);
  for (long c : counts) CHECK(c > 0);
}

TEST_CASE("gradient allocation partitions by ranking sign") {
  MethodConfig cfg;
  cfg.beta = 1.0;
  const MethodSpec simpo = registry_lookup(Method::kSimpo, cfg);

  // all correctly ranked: the misranked partition is absent
  std::vector<ScoredInstance> correct{make_scored(-1.0, -2.0), make_scored(-0.5, -3.0)};
  const GradientAllocation a = gradient_allocation(correct, simpo);
  CHECK_FALSE(a.misranked_mean.has_value());
  REQUIRE(a.correct_mean.has_value());

  // amapo batch with positive mean: above-mean correct instances contribute
  // sigma(-r) exactly
  const MethodSpec amapo = registry_lookup(Method::kAmapo, cfg);
  std::vector<ScoredInstance> batch{make_scored(-3.0, -2.0), make_scored(-2.5, -2.0),
                                    make_scored(-1.0, -2.0), make_scored(-0.5, -2.5)};
  // r = -1.0, -0.5, 1.0, 2.0; mu = 0.375 > 0; correct ones are above mean
  const auto grads = amapo_loss_grad(batch, cfg);
  CHECK(grads[2].d_theta_magnitude == doctest::Approx(sigmoid(-1.0)).epsilon(1e-12));
  CHECK(grads[3].d_theta_magnitude == doctest::Approx(sigmoid(-2.0)).epsilon(1e-12));

  // pointwise comparison against simpo with C = 1 on the same batch
  MethodConfig scfg = cfg;
  scfg.gamma_const = 1.0;
  const MethodSpec simpo_c1 = registry_lookup(Method::kSimpo, scfg);
  const GradientAllocation ga = gradient_allocation(batch, amapo);
  const GradientAllocation gs = gradient_allocation(batch, simpo_c1);
  REQUIRE(ga.correct_mean.has_value());
  REQUIRE(gs.correct_mean.has_value());
  CHECK(*ga.correct_mean < *gs.correct_mean);
  REQUIRE(ga.misranked_mean.has_value());
  CHECK(*ga.misranked_mean > *ga.correct_mean);
}

TEST_CASE("grad_check passes for simpo and reduces amapo to simpo with C = 0") {
  const GradCheckResult r = grad_check(Method::kSimpo, 100, 1e-6, 17);
  CHECK(r.passed());
  CHECK(r.compared == 100);
  CHECK(r.max_rel_err < 1e-6);

  const GradCheckResult am = grad_check(Method::kAmapo, 100, 1e-6, 18);
  CHECK(am.passed());

  std::mt19937_64 rng(19);
  MethodConfig zero_c;
  zero_c.gamma_const = 0.0;
  const MethodSpec simpo0 = registry_lookup(Method::kSimpo, zero_c);
  const MethodSpec amapo = registry_lookup(Method::kAmapo, zero_c);
  for (int i = 0; i < 50; ++i) {
    const ScoredInstance s = random_scored(rng, false, false);
    const std::span<const ScoredInstance> one(&s, 1);
    const LossGrad a = evaluate_batch(amapo, one).grads[0];
    const LossGrad b = evaluate_batch(simpo0, one).grads[0];
    CHECK(a.loss == b.loss);
    CHECK(a.d_logp_w == b.d_logp_w);
    CHECK(a.d_logp_l == b.d_logp_l);
  }
}

TEST_CASE("grad_check rejects a zero trial count") {
  CHECK_THROWS_AS(grad_check(Method::kDpo, 0, 1e-6, 1), ValidationError);
}

TEST_CASE("spearman correlation") {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> up{10.0, 20.0, 30.0, 40.0};
  const std::vector<double> down{4.0, 3.0, 2.0, 1.0};
  CHECK(*spearman(a, up) == doctest::Approx(1.0));
  CHECK(*spearman(a, down) == doctest::Approx(-1.0));
  const std::vector<double> flat{1.0, 1.0, 1.0, 1.0};
  CHECK_FALSE(spearman(a, flat).has_value());
  // monotone but nonlinear relation still gives rank correlation 1
  const std::vector<double> exp_a{std::exp(1.0), std::exp(2.0), std::exp(3.0), std::exp(4.0)};
  CHECK(*spearman(a, exp_a) == doctest::Approx(1.0));
}

TEST_CASE("histograms cover the observed range") {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> values(500);
  for (double& v : values) v = dist(rng);
  const HistogramSnapshot h = make_histogram("id", "r", values);
  REQUIRE(h.edges.size() == 51);
  REQUIRE(h.counts.size() == 50);
  long total = 0;
  for (long c : h.counts) total += c;
  CHECK(total == 500);
  CHECK(h.edges.front() <= *std::min_element(values.begin(), values.end()));
  CHECK(h.edges.back() >= *std::max_element(values.begin(), values.end()));

  // degenerate input still produces a valid histogram
  const std::vector<double> flat(10, 3.25);
  const HistogramSnapshot hf = make_histogram("id", "r", flat);
  long ftotal = 0;
  for (long c : hf.counts) ftotal += c;
  CHECK(ftotal == 10);
  CHECK(hf.skewness == 0.0);
}

TEST_CASE("skewness separates right-tailed from symmetric samples") {
  const std::vector<double> symmetric{-2.0, -1.0, 0.0, 1.0, 2.0};
  CHECK(std::abs(skewness(symmetric)) < 1e-12);

  std::mt19937_64 rng(45);
  std::exponential_distribution<double> expd(1.0);
  std::vector<double> tailed(2000);
  for (double& v : tailed) v = expd(rng);
  CHECK(skewness(tailed) > 1.0);  // exponential has population skewness 2

  std::vector<double> mirrored = tailed;
  for (double& v : mirrored) v = -v;
  CHECK(skewness(mirrored) == doctest::Approx(-skewness(tailed)).epsilon(1e-12));
}

TEST_CASE("report csv round-trips") {
  std::vector<ReportRow> rows;
  ReportRow a;
  a.epoch = 0;
  a.split = "id";
  a.ranking_accuracy = 0.8125;
  a.mean_loss = 1.25e-3;
  a.mean_d_theta = 0.48911234567890123;
  a.case_counts[0] = 5;
  a.case_counts[1] = 3;
  a.case_counts[2] = 0;
  a.case_counts[3] = 8;
  a.d_theta_misranked = 0.91;
  a.d_theta_correct = 0.17;
  a.margin_oracle_spearman = -0.33333333333333331;
  rows.push_back(a);
  ReportRow b;  // margin-undefined method: optional columns stay empty
  b.epoch = 1;
  b.split = "mutual_ood";
  b.ranking_accuracy = 1.0;
  b.mean_loss = 0.5;
  b.mean_d_theta = 1.0;
  rows.push_back(b);

  const std::string path = temp_path("prefopt_report_test.csv");
  write_report_csv(path, rows);
  const auto parsed = read_report_csv(path);
  REQUIRE(parsed.size() == rows.size());
  CHECK(parsed[0] == rows[0]);
  CHECK(parsed[1] == rows[1]);
  // a second write is byte-identical
  const std::string first = read_file(path);
  write_report_csv(path, parsed);
  CHECK(read_file(path) == first);
  std::filesystem::remove(path);
}
