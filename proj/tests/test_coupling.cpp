#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpp/branching.hpp"
#include "mpp/coupling.hpp"
#include "mpp/parallel.hpp"

using namespace mpp;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Two-sample chi-square p-value on pooled-quantile bins.
double two_sample_chi_square(std::vector<double> a, std::vector<double> b, std::size_t bins) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> edges;
  for (std::size_t k = 1; k < bins; ++k) edges.push_back(pooled[k * pooled.size() / bins]);
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  std::vector<double> ca(edges.size() + 1, 0.0), cb(edges.size() + 1, 0.0);
  for (double x : a) ca[std::upper_bound(edges.begin(), edges.end(), x) - edges.begin()] += 1.0;
  for (double x : b) cb[std::upper_bound(edges.begin(), edges.end(), x) - edges.begin()] += 1.0;
  const double ka = std::sqrt(static_cast<double>(b.size()) / static_cast<double>(a.size()));
  const double kb = 1.0 / ka;
  double stat = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    if (ca[i] + cb[i] == 0.0) continue;
    stat += std::pow(ka * ca[i] - kb * cb[i], 2) / (ca[i] + cb[i]);
    ++used;
  }
  return chi_square_sf(stat, static_cast<double>(used - 1));
}

}  // namespace

TEST_CASE("coupling labels") {
  CHECK(std::string(to_string(DivergenceCause::kExtraJumpX)) == "extra_jump_x");
  CHECK(std::string(to_string(DivergenceCause::kExtraJumpZ)) == "extra_jump_z");
  CHECK(std::string(to_string(DivergenceCause::kRateMismatchJump)) == "rate_mismatch_jump");
  CHECK(std::string(to_string(TVMethod::kLrFormula)) == "lr_formula");
  CHECK(std::string(to_string(CouplingMethod::kStepwise)) == "stepwise");
}

TEST_CASE("rates-constant model never diverges and both methods cross together") {
  const auto model = linear_birth_death(2.0, 1.0, 10000);
  const std::vector<std::int64_t> Z0{1};
  CoupleOptions step;
  step.method = CouplingMethod::kStepwise;
  std::size_t crossed = 0;
  for (std::uint64_t r = 0; r < 200; ++r) {
    const auto a = couple_run(model, Z0, 5.0 / 12.0, kInf, {11, r});
    const auto b = couple_run(model, Z0, 5.0 / 12.0, kInf, {11, r}, step);
    CHECK_FALSE(a.diverged);
    CHECK_FALSE(b.diverged);
    CHECK_FALSE(a.divergence_time.has_value());
    CHECK(*a.log_ratio == 0.0);
    REQUIRE(a.tau_star.has_value() == b.tau_star.has_value());
    if (a.tau_star) {
      ++crossed;
      CHECK(*a.tau_star == *b.tau_star);
      CHECK(a.z_final == b.z_final);
      CHECK(static_cast<double>(a.z_final[0]) >= std::pow(1e4, 7.0 / 12.0) + 1.0);
    } else {
      CHECK(a.z_extinct_first);
    }
  }
  CHECK(crossed > 60);
  CHECK(crossed < 140);
}

TEST_CASE("Z0 = 0 is immediate joint extinction") {
  const auto model = barebones(1, 3, 0.6, Phase::kInvasion, 1000);
  const std::vector<std::int64_t> Z0{0};
  for (auto method : {CouplingMethod::kMaximal, CouplingMethod::kStepwise}) {
    CoupleOptions o;
    o.method = method;
    const auto r = couple_run(model, Z0, 5.0 / 12.0, kInf, {1, 0}, o);
    CHECK(r.z_extinct_first);
    CHECK_FALSE(r.diverged);
    CHECK_FALSE(r.divergence_time.has_value());
    CHECK(r.event_count == 0);
  }
}

TEST_CASE("couple_run rejects bad input") {
  const std::vector<std::int64_t> Z0{1};
  CHECK_THROWS(couple_run(linear_birth_death(1.0, 2.0), Z0, 5.0 / 12.0, kInf, {1, 0}));
  CHECK_THROWS(couple_run(barebones(1, 3, 0.6, Phase::kInvasion), std::vector<std::int64_t>{1, 1}, 0.4, kInf, {1, 0}));
  CHECK_THROWS(couple_run(barebones(1, 3, 0.6, Phase::kInvasion), Z0, 1.5, kInf, {1, 0}));
  CHECK_THROWS(couple_run(barebones(1, 3, 0.6, Phase::kInvasion), std::vector<std::int64_t>{-1}, 0.4, kInf, {1, 0}));
}

TEST_CASE("divergence records on the barebones model") {
  const auto model = barebones(1, 3, 0.6, Phase::kInvasion, 1000);
  const std::vector<std::int64_t> Z0{1};
  CoupleOptions step;
  step.method = CouplingMethod::kStepwise;
  const std::size_t n = 2000;
  const auto res = parallel_map(n, default_threads(), [&](std::size_t r) {
    return std::pair{couple_run(model, Z0, 5.0 / 12.0, kInf, {21, r}, step),
                     couple_run(model, Z0, 5.0 / 12.0, kInf, {22, r})};
  });
  std::size_t ds = 0, dm = 0, located = 0;
  for (const auto& [s, m] : res) {
    if (s.diverged) {
      ++ds;
      REQUIRE(s.divergence_time.has_value());
      REQUIRE(s.divergence_cause.has_value());
      CHECK(*s.divergence_cause != DivergenceCause::kRateMismatchJump);
      CHECK_FALSE(s.tau_star.has_value());
    } else {
      CHECK_FALSE(s.divergence_time.has_value());
      CHECK((s.tau_star.has_value() || s.z_extinct_first));
    }
    if (m.diverged) {
      ++dm;
      CHECK(m.divergence_cause.has_value());
      if (m.divergence_time) {
        ++located;
        CHECK(*m.divergence_time <= m.end_time + 1e-12);
      }
    } else {
      CHECK(*m.log_ratio > -kInf);
    }
  }
  CHECK(ds > 0);
  CHECK(dm > 0);
  // A maximal coupling cannot separate more often than any other coupling.
  CHECK(wilson(dm, n).lo <= wilson(ds, n).hi);
  CHECK(located * 10 >= dm * 9);
}

TEST_CASE("z-marginal of the maximal coupling is the branching law") {
  // alpha = 0.1 puts the level near N^0.9, out of reach by time T.
  const auto model = barebones(1, 3, 0.6, Phase::kInvasion, 10000);
  const auto spec = branching_from_model(model);
  const std::vector<std::int64_t> Z0{1};
  const double T = 2.0;
  const std::size_t n = 10000;
  const auto zc = parallel_map(n, default_threads(), [&](std::size_t r) {
    return static_cast<double>(couple_run(model, Z0, 0.1, T, {31, r}).z_final[0]);
  });
  const auto zb = parallel_map(n, default_threads(), [&](std::size_t r) {
    return static_cast<double>(simulate_z(spec, Z0, T, kDefaultEventCap, {32, r}).final_state[0]);
  });
  CHECK(two_sample_chi_square(zc, zb, 20) > 0.001);
}

TEST_CASE("logistic likelihood ratio") {
  Rng rng({5, 0});
  const auto r0 = logistic_lr(100, 0, rng);
  CHECK(r0.value == 1.0);
  CHECK(r0.log_terms == 0.0);
  const std::vector<double> t1{1.0};
  const auto r1 = logistic_lr(100, 1, rng, t1);
  CHECK(r1.value == doctest::Approx(std::exp(0.01) * 0.99).epsilon(1e-14));
  CHECK(r1.value == doctest::Approx(0.99995).epsilon(1e-5));
  CHECK_THROWS(logistic_lr(100, 100, rng));
  CHECK_THROWS(logistic_lr(100, 2, rng, t1));
  const auto r = logistic_lr(10000, 464, rng);
  CHECK(r.value == doctest::Approx(std::exp(r.log_terms)).epsilon(1e-12));
  CHECK(r.value >= 0.0);
}

TEST_CASE("likelihood ratio has mean one below sqrt(N) jumps") {
  const std::int64_t N = 10000;
  const std::size_t n = 20000;
  const auto v = parallel_map(n, default_threads(), [&](std::size_t i) {
    Rng rng({6, i});
    return logistic_lr(N, 100, rng).value;
  });
  const auto ms = mean_se(v);
  CHECK(std::abs(ms.mean - 1.0) <= 4.0 * ms.se);
}

TEST_CASE("TV estimators") {
  std::vector<LRSample> ones(100);
  CHECK(tv_lower_from_lr(ones).value == 0.0);
  std::vector<LRSample> half(100);
  for (std::size_t i = 0; i < half.size(); ++i) half[i].value = i % 2 ? 1.5 : 0.5;
  const auto e = tv_lower_from_lr(half);
  CHECK(e.value == doctest::Approx(0.25));
  CHECK(e.method == TVMethod::kLrFormula);
  CHECK_THROWS(tv_lower_from_lr(std::span<const LRSample>(half.data(), 99)));
  const auto c = tv_from_coupling(25, 100);
  CHECK(c.value == doctest::Approx(0.25));
  CHECK(c.method == TVMethod::kCouplingBound);
  CHECK_THROWS(tv_from_coupling(0, 0));
}

TEST_CASE("TV does not vanish at the N^{2/3} scale") {
  const std::int64_t N = 10000;
  const auto m = static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(N), 2.0 / 3.0)));
  CHECK(m == 464);
  const std::size_t n = 10000;
  const auto samples = parallel_map(n, default_threads(), [&](std::size_t i) {
    Rng rng({7, i});
    return logistic_lr(N, m, rng);
  });
  const auto tv = tv_lower_from_lr(samples);
  CHECK(tv.value > 0.05);
  CHECK(tv.std_error < 0.01);
  CHECK(tv.value >= -3.0 * tv.std_error);
  CHECK(tv.value <= 1.0 + 3.0 * tv.std_error);
  std::vector<double> ex(n);
  for (std::size_t i = 0; i < n; ++i) ex[i] = samples[i].exponent;
  const double a = static_cast<double>(m) / std::pow(static_cast<double>(N), 2.0 / 3.0);
  CHECK(std::abs(sample_variance(ex) / (a * a * a / 3.0) - 1.0) <= 0.1);
}

TEST_CASE("divergence curves") {
  const std::vector<std::int64_t> Z0{1};
  const std::vector<std::int64_t> Ns{1000, 10000};
  const auto flat = divergence_curve(linear_birth_death(2.0, 1.0), Z0, Ns, 5.0 / 12.0, 200, 3);
  REQUIRE(flat.size() == 2);
  for (const auto& row : flat) CHECK(row.fraction.p == 0.0);
  CHECK(divergence_csv(flat).rfind("N,divergence_fraction,ci_low,ci_high\r\n1000,0,", 0) == 0);

  // Logistic growth to N^{3/4}: the maximal coupling separates with probability
  // equal to the TV computed from the explicit likelihood ratio.
  const auto logi = divergence_curve(logistic_model(), Z0, Ns, 0.25, 1000, 4);
  CHECK(logi.back().fraction.p > 0.05);
  const std::int64_t N = 10000;
  const auto m = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(N), 0.75) + 1.0) - 1.0);
  const auto samples = parallel_map(4000, default_threads(), [&](std::size_t i) {
    Rng rng({8, i});
    return logistic_lr(N, m, rng);
  });
  const auto tv = tv_lower_from_lr(samples);
  CHECK(logi.back().fraction.p >= tv.value - 3.0 * tv.std_error - 3.0 * logi.back().fraction.se);
  CHECK(logi.back().fraction.p <= tv.value + 3.0 * tv.std_error + 3.0 * logi.back().fraction.se);
}

TEST_CASE("symmetric gap experiment") {
  CHECK_THROWS(symmetric_gap_experiment(0.6, 1000, 10, 1));
  const auto g = symmetric_gap_experiment(0.25, 10000, 600, 9);
  CHECK(g.rescaled.size() == g.raw.size());
  CHECK(g.rescaled.size() > 500);
  const auto ms = mean_se(g.rescaled);
  CHECK(std::abs(ms.mean) <= 4.0 * ms.se);
  CHECK(std::sqrt(sample_variance(g.rescaled)) > 0.05);
  const auto lo = symmetric_gap_experiment(0.1, 10000, 600, 10);
  const auto hi = symmetric_gap_experiment(0.45, 10000, 600, 10);
  CHECK(sample_variance(lo.raw) > sample_variance(hi.raw));
  const auto again = symmetric_gap_experiment(0.25, 10000, 600, 9);
  CHECK(again.raw == g.raw);
}
