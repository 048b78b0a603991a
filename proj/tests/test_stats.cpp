#include <doctest.h>

#include <cmath>
#include <random>

#include "mpp/rng.hpp"
#include "mpp/stats.hpp"

using namespace mpp;

namespace {

std::vector<double> gumbel_samples(std::size_t n, double loc, double scale, std::uint64_t seed) {
  Rng rng({seed, 0});
  std::vector<double> x(n);
  for (auto& v : x) v = loc - scale * std::log(rng.exponential());
  return x;
}

}  // namespace

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a({42, 0});
  Rng b({42, 0});
  Rng c({42, 1});
  bool same = true;
  bool differ = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    same = same && x == b();
    differ = differ || x != c();
  }
  CHECK(same);
  CHECK(differ);
  Rng u({1, 2});
  double mean = 0.0;
  for (int i = 0; i < 100000; ++i) mean += u.exponential();
  CHECK(mean / 100000 == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("KS statistic basics") {
  const std::vector<double> one{0.0};
  CHECK(ks_statistic(one, [](double x) { return x >= 0 ? 0.5 : 0.0; }).statistic == doctest::Approx(0.5));
  // Plug-in quantiles of the Gumbel law.
  const std::size_t n = 500;
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = -std::log(-std::log((i + 1.0) / (n + 1.0)));
  const auto r = ks_statistic(q, [](double x) { return gumbel_cdf(x); });
  CHECK(r.statistic <= 1.0 / (n + 1.0) + 1e-12);
  const auto g = gumbel_samples(10000, 0.0, 1.0, 17);
  CHECK(ks_statistic(g, [](double x) { return gumbel_cdf(x); }).statistic < 1.63 / std::sqrt(10000.0));
}

TEST_CASE("Gumbel MLE recovers parameters") {
  const auto x = gumbel_samples(10000, 2.0, 3.0, 5);
  const auto fit = fit_gumbel(x);
  CHECK(fit.location == doctest::Approx(2.0).epsilon(0.05));
  CHECK(fit.scale == doctest::Approx(3.0).epsilon(0.05));
  CHECK(fit.ks_stat < 0.02);
  CHECK(fit.n == 10000);
}

TEST_CASE("Gumbel MLE error shrinks with n") {
  double err_small = 0.0;
  double err_large = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    err_small += std::abs(fit_gumbel(gumbel_samples(1000, 0.0, 1.0, 100 + s)).scale - 1.0);
    err_large += std::abs(fit_gumbel(gumbel_samples(10000, 0.0, 1.0, 200 + s)).scale - 1.0);
  }
  // Ratio should be near sqrt(10).
  CHECK(err_small / err_large > 1.8);
  CHECK(err_small / err_large < 6.0);
}

TEST_CASE("Gamma MLE recovers the shape") {
  std::mt19937_64 gen(3);
  std::gamma_distribution<double> G(2.0, 1.0);
  std::vector<double> x(10000);
  for (auto& v : x) v = G(gen);
  const auto fit = fit_gamma(x);
  CHECK(fit.shape == doctest::Approx(2.0).epsilon(0.07));
  CHECK(fit.scale == doctest::Approx(1.0).epsilon(0.07));
}

TEST_CASE("fits reject degenerate input") {
  const std::vector<double> c(500, 1.5);
  CHECK_THROWS_AS(fit_gumbel(c), FitError);
  CHECK_THROWS_AS(fit_gamma(c), FitError);
  const std::vector<double> few(50, 1.0);
  CHECK_THROWS_AS(fit_gumbel(few), FitError);
}

TEST_CASE("Wilson interval and helpers") {
  const auto ci = wilson(80, 100);
  CHECK(ci.p == doctest::Approx(0.8));
  CHECK(ci.lo < 0.8);
  CHECK(ci.hi > 0.8);
  CHECK(ci.lo > 0.7);
  const auto zero = wilson(0, 100);
  CHECK(zero.lo == 0.0);
  CHECK(zero.hi > 0.0);
  const std::vector<double> x{1, 2, 3, 4};
  CHECK(quantile(x, 0.5) == doctest::Approx(2.5));
  CHECK(sample_variance(x) == doctest::Approx(5.0 / 3.0));
  const std::vector<double> xs{0, 1, 2, 3};
  const std::vector<double> ys{1, 3, 5, 7};
  CHECK(linear_regression(xs, ys).slope == doctest::Approx(2.0));
  CHECK(chi_square_sf(0.0, 3) == 1.0);
  CHECK(chi_square_sf(7.815, 3) == doctest::Approx(0.05).epsilon(0.01));
  const auto b = bootstrap_median_ci(gumbel_samples(1001, 0, 1, 4), 500, 1);
  CHECK(b.lo < b.estimate);
  CHECK(b.hi > b.estimate);
}
