#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "prefopt/core.hpp"

using namespace prefopt;

TEST_CASE("log_sigmoid known values") {
  CHECK(log_sigmoid(0.0) == doctest::Approx(-0.6931471805599453).epsilon(1e-12));
  // brute force: -ln(1 + e^{-1})
  CHECK(log_sigmoid(1.0) == doctest::Approx(-0.31326168751822286).epsilon(1e-12));
  CHECK(log_sigmoid(-1.0) == doctest::Approx(-1.3132616875182228).epsilon(1e-12));
}

TEST_CASE("log_sigmoid asymptote and overflow safety") {
  CHECK(std::abs(log_sigmoid(-1000.0) - (-1000.0)) < 1e-9);
  CHECK(std::isfinite(log_sigmoid(1e6)));
  CHECK(std::isfinite(log_sigmoid(-1e6)));
  CHECK(log_sigmoid(1e6) <= 0.0);  // hits the limit value in double precision
  CHECK(log_sigmoid(30.0) < 0.0);
}

TEST_CASE("log_sigmoid rejects non-finite input") {
  CHECK_THROWS_AS(log_sigmoid(std::numeric_limits<double>::quiet_NaN()), ValidationError);
  CHECK_THROWS_AS(log_sigmoid(std::numeric_limits<double>::infinity()), ValidationError);
}

TEST_CASE("log_sigmoid is monotonically increasing and negative") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-50.0, 50.0);
  for (int i = 0; i < 200; ++i) {
    const double x = dist(rng);
    CHECK(log_sigmoid(x) < 0.0);
    CHECK(log_sigmoid(x + 0.1) > log_sigmoid(x));
  }
}

TEST_CASE("sigma(x) + sigma(-x) = 1 through log_sigmoid") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> dist(-30.0, 30.0);
  for (int i = 0; i < 500; ++i) {
    const double x = dist(rng);
    const double s = std::exp(log_sigmoid(x)) + std::exp(log_sigmoid(-x));
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("batch_stats examples") {
  const std::vector<double> a{3.0, 2.0, 1.0};
  const BatchStats sa = batch_stats(a);
  CHECK(sa.mu_r == doctest::Approx(2.0).epsilon(1e-12));
  // hand computation: population sigma = sqrt(2/3)
  CHECK(sa.sigma_r == doctest::Approx(0.816496580927726).epsilon(1e-12));
  CHECK(sa.count == 3);

  const std::vector<double> b{4.2, 4.2, 4.2};
  const BatchStats sb = batch_stats(b);
  CHECK(sb.mu_r == doctest::Approx(4.2));
  CHECK(sb.sigma_r == 0.0);

  const std::vector<double> c{0.5, -0.5};
  const BatchStats sc = batch_stats(c);
  CHECK(sc.mu_r == 0.0);
  CHECK(sc.sigma_r == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(batch_stats(std::vector<double>{}), "empty batch", ValidationError);
}

TEST_CASE("batch_stats centering and variance identities") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> dist(0.3, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(1 + trial % 40);
    for (double& x : xs) x = dist(rng);
    const BatchStats st = batch_stats(xs);
    double centered = 0.0;
    double sq = 0.0;
    for (double x : xs) {
      centered += x - st.mu_r;
      sq += (x - st.mu_r) * (x - st.mu_r);
    }
    CHECK(std::abs(centered / static_cast<double>(xs.size())) < 1e-12);
    CHECK(std::abs(st.sigma_r * st.sigma_r - sq / static_cast<double>(xs.size())) < 1e-12);
  }
}

TEST_CASE("batch_stats is permutation invariant bit for bit") {
  const std::vector<double> xs{0.1, -2.7, 3.14159, 0.1, 8.25, -1e-3};
  const BatchStats a = batch_stats(xs);
  const std::vector<double> perm{8.25, 0.1, -1e-3, 3.14159, 0.1, -2.7};
  const BatchStats b = batch_stats(perm);
  CHECK(a.mu_r == b.mu_r);
  CHECK(a.sigma_r == b.sigma_r);
}

TEST_CASE("perplexity examples") {
  CHECK(perplexity(0.0, 5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(perplexity(-std::log(4.0) * 2.0, 2) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(perplexity(-1.0, 1) == doctest::Approx(2.718281828459045).epsilon(1e-12));
  CHECK_THROWS_WITH_AS(perplexity(-1.0, 0), "zero length", ValidationError);
}

TEST_CASE("perplexity strictly decreasing in logp") {
  for (double logp = -8.0; logp < -0.2; logp += 0.13) {
    CHECK(perplexity(logp + 0.1, 7) < perplexity(logp, 7));
    CHECK(perplexity(logp, 7) >= 1.0);
  }
}

TEST_CASE("preference instance validation") {
  PreferenceInstance inst;
  inst.id = "x";
  inst.prompt_features = {1.0};
  inst.chosen_features = {1.0};
  inst.rejected_features = {1.0};
  CHECK_NOTHROW(inst.validate());

  PreferenceInstance bad = inst;
  bad.chosen_length = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = inst;
  bad.ref_logp_chosen = -1.0;  // missing partner
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = inst;
  bad.ref_logp_chosen = -1.0;
  bad.ref_logp_rejected = 0.5;  // positive log-prob
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = inst;
  bad.rejected_features = {1.0, 2.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
