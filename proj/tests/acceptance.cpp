// Acceptance checks 1-11. Prints one PASS/FAIL line per criterion with the
// measured values; exits non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "mpp/branching.hpp"
#include "mpp/cli.hpp"
#include "mpp/coupling.hpp"
#include "mpp/flow.hpp"
#include "mpp/lab.hpp"
#include "mpp/parallel.hpp"
#include "mpp/simulate.hpp"
#include "mpp/spectral.hpp"

using namespace mpp;

namespace {

constexpr std::uint64_t kSeed = 20240611;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [x]");
  }
};

std::string fmt(double x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
  return buf;
}

// Shared between criteria 5 and 6.
std::optional<EscapeDelayResult> g_escape_1e6;

const EscapeDelayResult& escape_1e6() {
  if (!g_escape_1e6) {
    g_escape_1e6 = escape_delay_experiment(barebones(1, 3, 0.6, Phase::kInvasion), 1000000, std::vector<std::int64_t>{1},
                                           5000, derive_seed(kSeed, 6));
  }
  return *g_escape_1e6;
}

void c1(Outcome& o) {
  const auto m = symmetric_two_type(0.25);
  const auto sp = perron(structure_at(m, m.x0).B0);
  const double eb = std::abs(sp.beta0 - 1.0);
  const double eu = std::max(std::abs(sp.u[0] - 0.5), std::abs(sp.u[1] - 0.5));
  const double ev = std::max(std::abs(sp.v[0] - 1.0), std::abs(sp.v[1] - 1.0));
  o.require(eb <= 1e-12, "|beta0-1|=" + fmt(eb));
  o.require(eu <= 1e-12, "|u-(1/2,1/2)|=" + fmt(eu));
  o.require(ev <= 1e-12, "|v-(1,1)|=" + fmt(ev));
}

void c2(Outcome& o) {
  const auto model = barebones(1, 3, 0.6, Phase::kInvasion);
  const std::size_t n = 10000;
  // Single-type birth-death invader: extinction probability death/birth.
  const auto spec = branching_from_model(model);
  double birth = 0.0, death = 0.0;
  for (const auto& e : spec.events) (e.J2[0] > 0 ? birth : death) += e.per_capita_rate;
  const double q = death / birth;
  for (std::int64_t z0 : {1, 2}) {
    const auto r = escape_delay_experiment(model, 10000, std::vector<std::int64_t>{z0}, n, derive_seed(kSeed, 20 + z0));
    const double oracle = 1.0 - std::pow(q, static_cast<double>(z0));
    const double se = std::sqrt(oracle * (1.0 - oracle) / static_cast<double>(n));
    o.require(std::abs(r.survival.p - oracle) <= 3.0 * se,
              "Z0=" + std::to_string(z0) + " fraction=" + fmt(r.survival.p) + " oracle=" + fmt(oracle) +
                  " 3SE=" + fmt(3.0 * se));
  }
}

void c3(Outcome& o) {
  CoupleOptions opts;
  opts.residual_draw = false;
  const std::vector<std::int64_t> Ns{1000, 10000, 100000, 1000000};
  const auto rows = divergence_curve(barebones(1, 3, 0.6, Phase::kInvasion), std::vector<std::int64_t>{1}, Ns,
                                     5.0 / 12.0, 5000, derive_seed(kSeed, 3), opts);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& f = rows[k].fraction;
    o.detail << (k ? "; " : "") << "N=" << rows[k].N << " " << fmt(f.p) << " [" << fmt(f.lo) << "," << fmt(f.hi) << "]";
  }
  for (std::size_t k = 1; k < rows.size(); ++k) {
    o.require(rows[k].fraction.hi < rows[k - 1].fraction.lo,
              "separated " + std::to_string(rows[k - 1].N) + "->" + std::to_string(rows[k].N));
  }
}

void c4(Outcome& o) {
  const std::int64_t N = 10000;
  const double n = static_cast<double>(N);
  auto run = [&](std::size_t m, std::uint64_t tag) {
    return parallel_map(10000, default_threads(), [&](std::size_t i) {
      Rng rng({derive_seed(kSeed, tag), i});
      return logistic_lr(N, m, rng);
    });
  };
  const auto m23 = static_cast<std::size_t>(std::floor(std::pow(n, 2.0 / 3.0)));
  const auto big = run(m23, 41);
  const auto tv = tv_lower_from_lr(big);
  std::vector<double> ex;
  for (const auto& s : big) ex.push_back(s.exponent);
  const double a = static_cast<double>(m23) / std::pow(n, 2.0 / 3.0);
  const double ratio = sample_variance(ex) / (a * a * a / 3.0);
  o.require(tv.value > 0.05, "m=" + std::to_string(m23) + " TV=" + fmt(tv.value));
  o.require(tv.std_error < 0.01, "stderr=" + fmt(tv.std_error));
  o.require(std::abs(ratio - 1.0) <= 0.1, "var/(a^3/3)=" + fmt(ratio));
  const auto m14 = static_cast<std::size_t>(std::floor(std::pow(n, 0.25) + 1e-9));
  const auto small = tv_lower_from_lr(run(m14, 42));
  o.require(small.value < 0.02, "m=" + std::to_string(m14) + " TV=" + fmt(small.value));
}

void c5(Outcome& o) {
  const auto model = barebones(1, 3, 0.6, Phase::kInvasion);
  std::vector<double> lx, ly;
  for (std::int64_t N : {10000, 100000}) {
    const auto r = escape_delay_experiment(model, N, std::vector<std::int64_t>{1}, 2000,
                                           derive_seed(kSeed, 50 + static_cast<std::uint64_t>(N)));
    lx.push_back(std::log(static_cast<double>(N)));
    ly.push_back(r.tau.mean);
  }
  lx.push_back(std::log(1e6));
  ly.push_back(escape_1e6().tau.mean);
  const auto reg = linear_regression(lx, ly);
  const double target = 7.0 / 12.0 / 2.4;
  o.detail << "mean tau " << fmt(ly[0]) << "," << fmt(ly[1]) << "," << fmt(ly[2]);
  o.require(std::abs(reg.slope / target - 1.0) <= 0.1, "slope=" + fmt(reg.slope) + " target=" + fmt(target));
}

void c6(Outcome& o) {
  const auto& r = escape_1e6();
  o.detail << "survivors=" << r.scaled_delays.size();
  if (!r.fit) {
    o.require(false, "fit refused");
    return;
  }
  o.require(r.fit->scale >= 0.9 && r.fit->scale <= 1.1, "scale=" + fmt(r.fit->scale));
  o.require(r.fit->ks_stat <= 0.03, "KS=" + fmt(r.fit->ks_stat));
  o.detail << "; location=" << fmt(r.fit->location);
}

void c7(Outcome& o) {
  const auto r = extinction_experiment(birth_death_spec(1.0, 1.8), 100000, 5000, derive_seed(kSeed, 7));
  o.require(r.ks_exact.statistic <= 0.02, "(a) sup|F_emp - p0^n0|=" + fmt(r.ks_exact.statistic));
  o.require(r.ks_standard.statistic <= 0.03, "(b) KS vs Gumbel=" + fmt(r.ks_standard.statistic));
}

void c8(Outcome& o) {
  const std::vector<std::int64_t> Ns{10000, 100000, 1000000};
  const auto r = path_closeness_experiment(barebones(1, 3, 0.6, Phase::kInvasion), Ns, std::vector<std::int64_t>{1},
                                           400, derive_seed(kSeed, 8));
  for (const auto& row : r.rows) {
    o.detail << (&row == &r.rows.front() ? "" : "; ") << "N=" << row.N << " median=" << fmt(row.median) << " ["
             << fmt(row.median_ci.lo) << "," << fmt(row.median_ci.hi) << "]";
  }
  o.require(r.rows.back().median_ci.hi < r.rows.front().median_ci.lo, "CI separated 1e4->1e6");
  o.require(r.slope.slope < -0.05, "log-median slope=" + fmt(r.slope.slope));
}

void c9(Outcome& o) {
  {
    const auto m = barebones(1, 3, 0.6, Phase::kInvasion, 1000);
    const std::vector<std::int64_t> X0{1000, 50};
    const std::vector<double> grid{1.0};
    SimOptions so;
    so.log_events = true;
    const std::size_t n = 10000;
    const auto mv = parallel_map(n, default_threads(), [&](std::size_t i) {
      return martingale_path(simulate(m, X0, {StopSpec::horizon(1.0)}, {derive_seed(kSeed, 91), i}, so), grid)[0];
    });
    double worst = 0.0;
    for (std::size_t c = 0; c < m.d; ++c) {
      std::vector<double> x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = mv[i][static_cast<Eigen::Index>(c)];
      const auto ms = mean_se(x);
      worst = std::max(worst, std::abs(ms.mean) / ms.se);
    }
    o.require(worst <= 4.0, "m_N(1) max |mean|/SE=" + fmt(worst));
  }
  {
    const auto spec = branching_from_model(barebones(1, 3, 0.6, Phase::kInvasion));
    double worst = 0.0;
    for (double t : {1.0, 2.0, 3.0}) {
      const auto w = w_shape_experiment(spec, std::vector<std::int64_t>{1}, t, 10000,
                                        derive_seed(kSeed, 92 + static_cast<std::uint64_t>(t)));
      const auto ms = mean_se(w.W);
      worst = std::max(worst, std::abs(ms.mean - 1.0) / ms.se);
    }
    o.require(worst <= 4.0, "W(t) max |mean-1|/SE=" + fmt(worst));
  }
  {
    double worst = 0.0;
    for (const auto& m : {barebones(1, 3, 0.6, Phase::kInvasion), barebones(1, 3, 0.6, Phase::kExtinction),
                          symmetric_two_type(0.25), logistic_model(), linear_birth_death(2.0, 1.0)}) {
      const auto sp = perron(structure_at(m, m.x0).B0);
      Vec xi0 = Vec::Map(m.x0.data(), static_cast<Eigen::Index>(m.d));
      const double eps = sp.beta0 > 0.0 ? 1e-4 : 1e-2;
      xi0.tail(static_cast<Eigen::Index>(m.d2())) = eps * sp.u;
      const double T = sp.beta0 > 0.0 ? std::log(0.1 / eps) / sp.beta0 : 5.0;
      const auto tr = integrate(m, xi0, T, 1e-12);
      const std::vector<double> grid{T / 4, T / 2, T};
      for (const auto& r : voc_residual(m, tr, grid)) worst = std::max(worst, r.max());
    }
    o.require(worst <= 1e-6, "VOC max residual=" + fmt(worst));
  }
  {
    double worst = 0.0;
    for (double tol : {1e-6, 1e-8, 1e-10}) {
      const double x0 = 0.1, T = 5.0;
      Vec xi0(1);
      xi0 << x0;
      const auto tr = integrate(logistic_model(), xi0, T, tol);
      const double exact = x0 * std::exp(T) / (1.0 - x0 + x0 * std::exp(T));
      const double err = std::abs(tr.final_state()[0] - exact);
      worst = std::max(worst, err / tol);
    }
    o.require(worst <= 1.0, "logistic endpoint max err/tol=" + fmt(worst));
  }
}

void c10(Outcome& o) {
  const auto spec = birth_death_spec(3.0, 0.6);
  for (std::int64_t z0 : {1, 2, 3}) {
    const auto r = w_shape_experiment(spec, std::vector<std::int64_t>{z0}, 4.0, 100000,
                                      derive_seed(kSeed, 100 + static_cast<std::uint64_t>(z0)));
    if (!r.fit) {
      o.require(false, "Z0=" + std::to_string(z0) + " fit refused");
      continue;
    }
    const double z = static_cast<double>(z0);
    o.require(std::abs(r.fit->shape / z - 1.0) <= 0.1,
              "Z0=" + std::to_string(z0) + " shape=" + fmt(r.fit->shape) + " scale=" + fmt(r.fit->scale) +
                  " (candidates 1, " + fmt(r.candidate_scales.back()) + ")");
  }
}

void c11(Outcome& o) {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / ("mpp_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::ostringstream sink, err;
  int codes = 0;
  for (const char* d : {"a", "b"}) {
    codes += cli::run({"reproduce", "--experiment", "appendixF-tv", "--N", "10000", "--replicas", "2000", "--seed", "11",
                       "--out", (root / d).string()},
                      sink, err);
  }
  o.require(codes == 0, "exit codes 0");
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  for (const char* f : {"appendixF_tv.csv", "appendixF_tv.json"}) {
    const auto a = slurp(root / "a" / f);
    o.require(!a.empty() && a == slurp(root / "b" / f), std::string(f) + " identical");
  }
  fs::remove_all(root);
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
      {"C1 spectral exactness", c1},        {"C2 survival probability", c2},
      {"C3 coupling fidelity", c3},         {"C4 TV breakdown", c4},
      {"C5 escape-time scaling", c5},       {"C6 escape-delay Gumbel", c6},
      {"C7 extinction Gumbel", c7},         {"C8 path closeness", c8},
      {"C9 martingale and ODE checks", c9}, {"C10 W shape", c10},
      {"C11 reproducibility", c11},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << " (" << fmt(secs, 3) << " s)"
              << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
