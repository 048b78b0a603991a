#include <doctest.h>

#include <cmath>
#include <vector>

#include "mpp/branching.hpp"
#include "mpp/model.hpp"
#include "mpp/parallel.hpp"
#include "mpp/simulate.hpp"
#include "mpp/stats.hpp"

using namespace mpp;

namespace {

std::vector<StopSpec> horizon_only(double T) { return {StopSpec::horizon(T), StopSpec::event_cap(1e7)}; }

bool same_log(const TrajectoryRecord& a, const TrajectoryRecord& b) {
  if (a.events.size() != b.events.size()) return false;
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    if (a.events[i].t != b.events[i].t || a.events[i].jump != b.events[i].jump) return false;
  }
  return a.final_state == b.final_state;
}

}  // namespace

TEST_CASE("compiled rates match the model's polynomial rates") {
  for (const auto& m : {barebones(1, 3, 0.6, Phase::kInvasion, 500), symmetric_two_type(0.25, 500),
                        linear_birth_death(2, 1, 500)}) {
    CompiledModel cm(m);
    std::vector<double> X(m.d);
    for (std::size_t i = 0; i < m.d; ++i) X[i] = 37.0 * (i + 1);
    std::vector<double> r(cm.num_jumps());
    const double total = cm.rates(X.data(), r.data());
    double sum = 0.0;
    Vec x(m.d);
    for (std::size_t i = 0; i < m.d; ++i) x[i] = X[i] / m.N;
    for (std::size_t j = 0; j < m.jumps.size(); ++j) {
      const double expect = m.N * m.jumps[j].rate(std::span<const double>(x.data(), m.d));
      CHECK(r[j] == doctest::Approx(expect).epsilon(1e-12));
      sum += expect;
    }
    CHECK(total == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("same seed gives the same trajectory, different streams differ") {
  const auto m = barebones(1, 3, 0.6, Phase::kInvasion, 200);
  const std::vector<std::int64_t> X0{200, 3};
  SimOptions o;
  o.log_events = true;
  const auto a = simulate(m, X0, horizon_only(3.0), {11, 0}, o);
  const auto b = simulate(m, X0, horizon_only(3.0), {11, 0}, o);
  const auto c = simulate(m, X0, horizon_only(3.0), {11, 1}, o);
  CHECK(same_log(a, b));
  CHECK_FALSE(same_log(a, c));
}

TEST_CASE("infinite truncation radius reproduces the untruncated run") {
  const auto m = barebones(1, 3, 0.6, Phase::kInvasion, 200);
  const std::vector<std::int64_t> X0{200, 3};
  SimOptions o;
  o.log_events = true;
  const auto a = simulate(m, X0, horizon_only(3.0), {5, 0}, o);
  const auto b = simulate_truncated(m, std::numeric_limits<double>::infinity(), X0, horizon_only(3.0), {5, 0}, o);
  CHECK(same_log(a, b));
  CHECK_FALSE(b.truncation_time.has_value());
}

TEST_CASE("event log replays to the final state and counts stay non-negative") {
  const auto m = barebones(1, 3, 0.6, Phase::kInvasion, 300);
  const std::vector<std::int64_t> X0{300, 2};
  SimOptions o;
  o.log_events = true;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto tr = simulate(m, X0, horizon_only(4.0), {s, 0}, o);
    CHECK(state_at(tr, tr.end_time) == tr.final_state);
    std::vector<std::int64_t> X = X0;
    bool nonneg = true;
    for (const auto& e : tr.events) {
      for (std::size_t i = 0; i < m.d; ++i) {
        X[i] += m.jumps[e.jump].delta[i];
        nonneg = nonneg && X[i] >= 0;
      }
    }
    CHECK(nonneg);
    CHECK(X == tr.final_state);
    CHECK(tr.event_count == tr.events.size());
  }
}

TEST_CASE("Yule process mean at t = 1 is e") {
  const auto spec = birth_death_spec(1.0, 0.0);
  const std::vector<std::int64_t> Z0{1};
  const std::size_t n = 20000;
  const auto z = parallel_map(n, default_threads(), [&](std::size_t i) {
    const auto tr = simulate_z(spec, Z0, 1.0, kDefaultEventCap, {7, i});
    return static_cast<double>(tr.final_state[0]);
  });
  const auto ms = mean_se(z);
  CHECK(std::abs(ms.mean - std::exp(1.0)) <= 4.0 * ms.se);
}

TEST_CASE("subcritical birth-death extinction probability matches p0(t)") {
  const double lambda = 1.0;
  const double mu = 2.0;
  const double t = 1.0;
  const double e = std::exp((lambda - mu) * t);
  const double p0 = mu * (e - 1.0) / (lambda * e - mu);
  const auto spec = birth_death_spec(lambda, mu);
  const std::vector<std::int64_t> Z0{1};
  const std::size_t n = 100000;
  const auto ext = parallel_map(n, default_threads(), [&](std::size_t i) {
    const auto tr = simulate_z(spec, Z0, t, kDefaultEventCap, {9, i});
    return tr.final_state[0] == 0 ? 1 : 0;
  });
  std::size_t k = 0;
  for (int v : ext) k += static_cast<std::size_t>(v);
  const auto ci = wilson(k, n, 3.29);
  CHECK(ci.lo <= p0);
  CHECK(ci.hi >= p0);
}

TEST_CASE("martingale m_N has mean zero") {
  const auto m = barebones(1, 3, 0.6, Phase::kInvasion, 100);
  const std::vector<std::int64_t> X0{100, 5};
  const std::vector<double> grid{0.5, 1.0};
  const std::size_t n = 4000;
  SimOptions o;
  o.log_events = true;
  const auto mv = parallel_map(n, default_threads(), [&](std::size_t i) {
    const auto tr = simulate(m, X0, horizon_only(1.0), {21, i}, o);
    return martingale_path(tr, grid);
  });
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t c = 0; c < m.d; ++c) {
      std::vector<double> x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = mv[i][g][c];
      const auto ms = mean_se(x);
      CHECK(std::abs(ms.mean) <= 4.0 * ms.se);
    }
  }
}

TEST_CASE("stopping rules") {
  const auto m = linear_birth_death(1.0, 2.0, 1000);
  const std::vector<std::int64_t> X0{5};
  const auto tr = simulate(m, X0, {StopSpec::horizon(1e6), StopSpec::event_cap(1e7), StopSpec::second_block_zero()},
                           {3, 0});
  CHECK(tr.final_state[0] == 0);
  CHECK(tr.stopping.tau_x0.has_value());
  CHECK(tr.reason == TerminalReason::kStopHit);

  const auto up = linear_birth_death(2.0, 1.0, 1000);
  SimOptions o;
  o.log_events = true;
  const std::vector<double> v{1.0};
  const auto hit = simulate(up, std::vector<std::int64_t>{50},
                            {StopSpec::horizon(100.0), StopSpec::event_cap(1e7), StopSpec::weighted_level(v, 200.0)},
                            {3, 1}, o);
  REQUIRE(hit.reason == TerminalReason::kStopHit);
  CHECK(hit.final_state[0] == 200);
  REQUIRE(hit.stopping.tau_alpha.has_value());
  const auto fc = first_crossing(hit, v, 200.0);
  REQUIRE(fc.has_value());
  CHECK(*fc == *hit.stopping.tau_alpha);
  CHECK(first_crossing(hit, v, 10.0) == 0.0);

  const auto capped = simulate(up, std::vector<std::int64_t>{50}, {StopSpec::horizon(100.0), StopSpec::event_cap(10)},
                               {3, 2});
  CHECK(capped.reason == TerminalReason::kEventCap);
  CHECK(capped.event_count == 10);
}

TEST_CASE("snapshots are recorded on the grid") {
  const auto m = barebones(1, 3, 0.6, Phase::kInvasion, 200);
  SimOptions o;
  o.snapshot_grid = {0.0, 0.5, 1.0, 1.5};
  o.log_events = true;
  const auto tr = simulate(m, std::vector<std::int64_t>{200, 3}, horizon_only(1.5), {1, 0}, o);
  REQUIRE(tr.snapshots.size() == 4);
  for (const auto& s : tr.snapshots) {
    const auto X = state_at(tr, s.t);
    for (std::size_t i = 0; i < m.d; ++i) CHECK(s.x[i] == doctest::Approx(X[i] / 200.0));
  }
}

TEST_CASE("negative rates are rejected with the offending state") {
  const auto m = logistic_model(10);
  try {
    simulate(m, std::vector<std::int64_t>{20}, horizon_only(1.0), {1, 0});
    FAIL("expected a SimulationError");
  } catch (const SimulationError& e) {
    CHECK(e.state()[0] == 20.0);
  }
  CHECK_THROWS_AS(simulate(m, std::vector<std::int64_t>{1, 2}, horizon_only(1.0), {1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(simulate(m, std::vector<std::int64_t>{1}, {}, {1, 0}), std::invalid_argument);
}
