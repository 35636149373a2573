#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "drpo/schedule.hpp"
#include "test_util.hpp"

using namespace drpo;

TEST_CASE("constant schedule by hand") {
  const auto s = build_schedule(2, 0.1, 0.1);
  CHECK(s.steps() == 2);
  CHECK(s.betas()[0] == 0.1);
  CHECK(s.betas()[1] == 0.1);
  CHECK(s.alphas()[0] == 0.9);
  CHECK(s.alphas()[1] == 0.9);
  CHECK(s.alpha_bars()[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bars()[1] == doctest::Approx(0.81).epsilon(1e-15));
  CHECK(s.sigma(0) == 0.0);
  CHECK(s.sigma(1) * s.sigma(1) == doctest::Approx(0.1 * 0.1 / 0.19));
}

TEST_CASE("schedule invariants over a long linear schedule") {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  const auto betas = s.betas();
  CHECK(betas.front() == 1e-4);
  CHECK(betas.back() == doctest::Approx(0.02).epsilon(1e-15));
  for (int t = 0; t < 1000; ++t) {
    CHECK(s.alpha(t) == 1.0 - s.beta(t));
    CHECK(s.alpha_bar(t) > 0.0);
    CHECK(s.alpha_bar(t) < 1.0);
    if (t > 0) {
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
      CHECK(std::abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)) <= 1e-12 * s.alpha_bar(t));
      CHECK(s.sigma(t) > 0.0);
      if (t > 1) CHECK(betas[t] - betas[t - 1] == doctest::Approx(betas[1] - betas[0]).epsilon(1e-9));
    }
  }
  // mpmath cumulative product, 40 digits
  CHECK(s.alpha_bars().back() == doctest::Approx(0.000040358297653756833148).epsilon(1e-10));
  CHECK(s.alpha_bars().back() < 0.01);
}

TEST_CASE("build_schedule preconditions") {
  CHECK_CODE(build_schedule(1, 0.1, 0.1), invalid_range);
  CHECK_CODE(build_schedule(0, 0.1, 0.1), invalid_range);
  CHECK_CODE(build_schedule(10, 0.0, 0.1), invalid_range);
  CHECK_CODE(build_schedule(10, 0.2, 0.1), invalid_range);
  CHECK_CODE(build_schedule(10, 0.1, 1.0), invalid_range);
  CHECK_CODE(build_schedule(10, std::nan(""), 0.1), invalid_range);
}

TEST_CASE("marginal_sample") {
  // alpha_bar(1) = 0.81 for the constant 0.1 schedule
  const auto s = build_schedule(3, 0.1, 0.1);
  const NoisySample a = marginal_sample(s, Vec{1.0, 0.0}, 0, Vec{0.0, 0.0});
  CHECK(a.timestep == 1);
  CHECK(a.value[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(a.value[1] == 0.0);

  // alpha_bar(1) = 0.25: alpha(0) = alpha(1) = 0.5
  const auto q = build_schedule(3, 0.5, 0.5);
  const NoisySample b = marginal_sample(q, Vec{1.0, 2.0}, 0, Vec{-1.0, 1.0});
  CHECK(b.value[0] == doctest::Approx(-0.36602540378443864676).epsilon(1e-14));
  CHECK(b.value[1] == doctest::Approx(1.8660254037844386468).epsilon(1e-14));

  // Near-zero noise limit returns y0.
  const auto tiny = build_schedule(3, 1e-15, 1e-15);
  const NoisySample c = marginal_sample(tiny, Vec{0.7, -3.0}, 1, Vec{5.0, 5.0});
  CHECK(c.value[0] == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(c.value[1] == doctest::Approx(-3.0).epsilon(1e-6));

  // eps = 0 reproduces sqrt(abar_{t+1}) y0 to the last bit.
  const auto s1000 = build_schedule(1000, 1e-4, 0.02);
  for (int t = 0; t < 999; t += 37) {
    const NoisySample n = marginal_sample(s1000, Vec{1.25}, t, Vec{0.0});
    CHECK(n.value[0] == std::sqrt(s1000.alpha_bar(t + 1)) * 1.25);
  }

  CHECK_CODE(marginal_sample(s, Vec{1.0}, 0, Vec{0.0, 0.0}), dimension_mismatch);
  CHECK_CODE(marginal_sample(s, Vec{1.0}, -1, Vec{0.0}), timestep_out_of_range);
  CHECK_CODE(marginal_sample(s, Vec{1.0}, 2, Vec{0.0}), timestep_out_of_range);
}

TEST_CASE("posterior_mean") {
  const auto s = build_schedule(3, 0.1, 0.1);
  const Vec m = posterior_mean(s, Vec{1.0, 0.0}, Vec{1.0, 0.0}, 0);
  CHECK(m[0] == doctest::Approx(0.77058426612943823409).epsilon(1e-14));
  CHECK(m[1] == 0.0);
  CHECK(posterior_mean(s, Vec{0.3, -2.0}, Vec{0.0, 0.0}, 1) == Vec{0.3, -2.0});
  CHECK(posterior_mean(s, Vec{0.0, 0.0}, Vec{0.0, 0.0}, 0) == Vec{0.0, 0.0});

  const auto lin = build_schedule(50, 1e-3, 0.05);
  const Vec u{0.4, -1.1, 2.0}, v{-0.3, 0.8, 0.05};
  for (double a : {-3.0, 0.5, 7.25}) {
    const Vec base = posterior_mean(lin, u, v, 20);
    const Vec scaled = posterior_mean(lin, Vec{a * u[0], a * u[1], a * u[2]},
                                      Vec{a * v[0], a * v[1], a * v[2]}, 20);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(scaled[k] - a * base[k]) <= 1e-12 * std::abs(a * base[k]));
  }
  CHECK_CODE(posterior_mean(s, Vec{1.0}, Vec{1.0, 2.0}, 0), dimension_mismatch);
  CHECK_CODE(posterior_mean(s, Vec{1.0}, Vec{1.0}, 2), timestep_out_of_range);
}

TEST_CASE("ancestral_mean") {
  const auto s = build_schedule(3, 0.1, 0.1);
  const Vec m = ancestral_mean(s, Vec{1.0}, Vec{1.0}, 0);
  CHECK(m[0] == doctest::Approx((1.0 - 0.1 / std::sqrt(0.19)) / std::sqrt(0.9)));
}

TEST_CASE("logprob_coefficient") {
  const auto s = build_schedule(3, 0.1, 0.1);
  CHECK(logprob_coefficient(s, 1) == doctest::Approx(0.26315789473684210526).epsilon(1e-14));
  CHECK_CODE(logprob_coefficient(s, 0), timestep_out_of_range);
  CHECK_CODE(logprob_coefficient(s, 2), timestep_out_of_range);

  // c_t is beta_{t+1} times a factor that does not involve beta_{t+1}, so it vanishes with it.
  const auto lin = build_schedule(100, 1e-4, 0.05);
  for (int t = 1; t < 99; ++t) {
    const double rest = 0.5 * lin.alpha(t) / ((1.0 - lin.alpha_bar(t)) * lin.alpha(t + 1));
    CHECK(logprob_coefficient(lin, t) == doctest::Approx(lin.beta(t + 1) * rest).epsilon(1e-14));
  }
}

TEST_CASE("logprob_coefficient against the unsimplified expansion") {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  std::ifstream in(DRPO_ORACLE_DIR "/logprob_coefficients_T1000.txt");
  REQUIRE(in);
  int t = 0;
  double expected = 0.0;
  int rows = 0;
  double worst = 0.0;
  while (in >> t >> expected) {
    const double got = logprob_coefficient(s, t);
    CHECK(got > 0.0);
    worst = std::max(worst, std::abs(got - expected) / expected);
    // Same expansion evaluated from the schedule's own sigma.
    const double sigma2 = s.sigma(t + 1) * s.sigma(t + 1);
    const double direct = 1.0 / (2.0 * sigma2) * (s.alpha(t) / s.alpha(t + 1)) * s.beta(t + 1) *
                          s.beta(t + 1) / (1.0 - s.alpha_bar(t + 1));
    CHECK(std::abs(got - direct) <= 1e-12 * direct);
    ++rows;
  }
  CHECK(rows == 998);
  CHECK(worst < 1e-12);
}

TEST_CASE("sample_timestep") {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) CHECK(sample_timestep(rng, 3) == 1);

  Rng a(9), b(9);
  for (int k = 0; k < 100; ++k) CHECK(sample_timestep(a, 50) == sample_timestep(b, 50));

  // 10^6 draws on T = 1000: 998 admissible values.
  Rng r(12345);
  const int T = 1000;
  const int draws = 1000000;
  std::vector<int> counts(T, 0);
  for (int k = 0; k < draws; ++k) ++counts.at(sample_timestep(r, T));
  CHECK(counts[0] == 0);
  CHECK(counts[T - 1] == 0);
  const double p = 1.0 / 998.0;
  const double mean = draws * p;
  const double sd = std::sqrt(draws * p * (1 - p));
  double chi2 = 0.0;
  for (int t = 1; t <= T - 2; ++t) {
    CHECK(std::abs(counts[t] - mean) < 5 * sd);
    chi2 += (counts[t] - mean) * (counts[t] - mean) / mean;
  }
  // 997 degrees of freedom: mean 997, sd ~44.7
  CHECK(chi2 < 997 + 5 * std::sqrt(2.0 * 997));
  CHECK_CODE(sample_timestep(r, 2), invalid_range);
}
