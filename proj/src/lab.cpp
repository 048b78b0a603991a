#include "mpp/lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mpp/flow.hpp"
#include "mpp/output.hpp"
#include "mpp/parallel.hpp"
#include "mpp/simulate.hpp"
#include "mpp/spectral.hpp"

namespace mpp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct EscapeSetup {
  PopulationModel model;
  std::vector<double> X0;
  std::vector<double> v;
  double beta0 = 0.0;
  double vz0 = 0.0;
  double level = 0.0;
};

EscapeSetup escape_setup(const PopulationModel& base, std::int64_t N, std::span<const std::int64_t> Z0, double alpha) {
  if (N < 2) throw std::invalid_argument("N must be at least 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  EscapeSetup s;
  s.model = base.with_scale(N);
  const auto report = validate_model(s.model);
  if (!report.passed) throw std::invalid_argument("model fails validation: " + report.violations.front().message);
  if (Z0.size() != s.model.d2()) throw std::invalid_argument("Z0 length does not match the second block");
  const auto sp = perron(structure_at(s.model, s.model.x0).B0);
  if (!(sp.beta0 > 0.0)) throw std::invalid_argument("escape needs the invasion regime (beta0 > 0)");
  s.beta0 = sp.beta0;
  const double n = static_cast<double>(N);
  for (std::size_t i = 0; i < s.model.d1; ++i) s.X0.push_back(std::round(n * s.model.x0[i]));
  for (std::size_t i = 0; i < Z0.size(); ++i) {
    if (Z0[i] < 0) throw std::invalid_argument("Z0 must be non-negative");
    s.X0.push_back(static_cast<double>(Z0[i]));
    s.v.push_back(sp.v[static_cast<Eigen::Index>(i)]);
    s.vz0 += s.v.back() * static_cast<double>(Z0[i]);
  }
  if (!(s.vz0 > 0.0)) throw std::invalid_argument("Z0 must be non-zero");
  s.level = std::pow(n, 1.0 - alpha) + s.vz0;
  return s;
}

// Stops at extinction of the second block or when v.X2 reaches the level.
struct EscapeStop {
  const EscapeSetup& s;
  const CompiledModel& cm;
  std::optional<double> extinct;
  std::optional<double> tau;

  void hold(double, double, const double*, const double*, double) {}
  bool after_jump(double t, std::size_t j, const double* X) {
    if (!cm.second_block(j)) return false;
    double w = 0.0;
    bool zero = true;
    for (std::size_t i = s.model.d1; i < s.model.d; ++i) {
      w += s.v[i - s.model.d1] * X[i];
      zero = zero && X[i] == 0.0;
    }
    if (zero) {
      extinct = t;
      return true;
    }
    if (w >= s.level) {
      tau = t;
      return true;
    }
    return false;
  }
};

void check_engine(const EngineResult& r) {
  if (r.reason == TerminalReason::kEventCap) throw std::runtime_error("event cap reached before the run finished");
}

Vec initial_flow_state(const EscapeSetup& s) {
  Vec xi(static_cast<Eigen::Index>(s.model.d));
  const double n = static_cast<double>(s.model.N);
  for (std::size_t i = 0; i < s.model.d; ++i) {
    xi[static_cast<Eigen::Index>(i)] = i < s.model.d1 ? s.model.x0[i] : s.X0[i] / n;
  }
  return xi;
}

double weighted_density(const EscapeSetup& s, const Vec& xi) {
  double w = 0.0;
  for (std::size_t i = s.model.d1; i < s.model.d; ++i) w += s.v[i - s.model.d1] * xi[static_cast<Eigen::Index>(i)];
  return w;
}

// First time v.xi2 reaches level / N on the flow started from (x0^(1), Z0/N).
std::optional<double> flow_crossing(const EscapeSetup& s, double t_guess) {
  const double target = s.level / static_cast<double>(s.model.N);
  const double T = 2.0 * std::max(t_guess, 1.0) + 10.0 / s.beta0;
  const auto traj = integrate(s.model, initial_flow_state(s), T, 1e-10);
  for (std::size_t k = 1; k < traj.times.size(); ++k) {
    if (weighted_density(s, traj.states[k]) < target) continue;
    double lo = traj.times[k - 1], hi = traj.times[k];
    for (int it = 0; it < 100 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      (weighted_density(s, traj.at(mid)) >= target ? hi : lo) = mid;
    }
    return hi;
  }
  return std::nullopt;
}

nlohmann::json opt_json(const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); }

nlohmann::json ci_json(const ProportionCI& c) {
  return {{"p", c.p}, {"se", c.se}, {"ci_low", c.lo}, {"ci_high", c.hi}, {"successes", c.successes}, {"n", c.n}};
}

nlohmann::json mean_json(const MeanSE& m) { return {{"mean", m.mean}, {"sd", m.sd}, {"se", m.se}, {"n", m.n}}; }

nlohmann::json gumbel_json(const std::optional<GumbelFit>& f) {
  if (!f) return nullptr;
  return {{"location", f->location}, {"scale", f->scale}, {"ks_stat", f->ks_stat}, {"n", f->n}};
}

nlohmann::json header_json(const char* experiment) { return {{"experiment", experiment}, {"build", build_version()}}; }

}  // namespace

EscapeDelayResult escape_delay_experiment(const PopulationModel& model, std::int64_t N,
                                          std::span<const std::int64_t> Z0, std::size_t replicas, std::uint64_t seed,
                                          double alpha, unsigned threads) {
  const auto s = escape_setup(model, N, Z0, alpha);
  EscapeDelayResult r;
  r.N = N;
  r.Z0.assign(Z0.begin(), Z0.end());
  r.alpha = alpha;
  r.seed = seed;
  r.beta0 = s.beta0;
  r.level = s.level;
  r.t_xi = ((1.0 - alpha) * std::log(static_cast<double>(N)) - std::log(s.vz0)) / s.beta0;
  r.t_xi_flow = flow_crossing(s, r.t_xi);

  const CompiledModel cm(s.model);
  r.replicas = parallel_map(replicas, threads, [&](std::size_t i) {
    ReplicaSummary rs;
    rs.seed = {seed, i};
    Rng rng(rs.seed);
    std::vector<double> X = s.X0;
    EscapeStop stop{s, cm, std::nullopt, std::nullopt};
    check_engine(run_events(cm, X, 0.0, kInf, kDefaultEventCap, rng, stop));
    if (stop.tau) {
      rs.survived = true;
      rs.tau_star = stop.tau;
      rs.delay = *stop.tau - r.t_xi;
      double w = 0.0;
      for (std::size_t k = s.model.d1; k < s.model.d; ++k) w += s.v[k - s.model.d1] * X[k];
      rs.W_est = w * std::exp(-s.beta0 * *stop.tau);
    } else {
      rs.extinction_time = stop.extinct;
    }
    return rs;
  });
  std::vector<double> taus;
  for (const auto& rs : r.replicas) {
    if (!rs.survived) continue;
    taus.push_back(*rs.tau_star);
    r.scaled_delays.push_back(s.beta0 * *rs.delay);
  }
  r.survival = wilson(taus.size(), replicas);
  if (!taus.empty()) {
    r.tau = mean_se(taus);
    r.scaled_delay = mean_se(r.scaled_delays);
  }
  if (r.scaled_delays.size() >= kMinFitSamples) r.fit = fit_gumbel(r.scaled_delays);
  return r;
}

double bd_extinction_cdf(double t, double lambda, double mu, std::int64_t n0) {
  if (!(t > 0.0)) return 0.0;
  const double e = std::exp(-(mu - lambda) * t);
  const double log_p0 = std::log(mu) + std::log1p(-e) - std::log(mu - lambda * e);
  return std::exp(static_cast<double>(n0) * log_p0);
}

ExtinctionResult extinction_experiment(const BranchingSpec& spec, std::int64_t n0, std::size_t replicas,
                                       std::uint64_t seed, unsigned threads) {
  if (spec.d2 != 1) throw std::invalid_argument("extinction_experiment supports single-type specs only");
  if (n0 < 1) throw std::invalid_argument("extinction_experiment needs n0 >= 1");
  ExtinctionResult r;
  r.n0 = n0;
  r.seed = seed;
  for (const auto& ev : spec.events) {
    if (ev.J2[0] == 1) {
      r.lambda += ev.per_capita_rate;
    } else if (ev.J2[0] == -1) {
      r.mu += ev.per_capita_rate;
    } else {
      throw std::invalid_argument("extinction_experiment needs a birth-death spec (jumps +1 and -1)");
    }
  }
  if (!(r.mu > r.lambda)) throw std::invalid_argument("extinction_experiment needs a subcritical spec (mu > lambda)");
  r.beta1 = r.mu - r.lambda;
  r.h_star = 1.0 - r.lambda / r.mu;

  const CompiledModel cm(branching_as_model(spec));
  struct Passive {
    void hold(double, double, const double*, const double*, double) {}
    bool after_jump(double, std::size_t, const double*) { return false; }
  };
  r.times = parallel_map(replicas, threads, [&](std::size_t i) {
    Rng rng({seed, i});
    std::vector<double> X{static_cast<double>(n0)};
    Passive p;
    const auto res = run_events(cm, X, 0.0, kInf, kDefaultEventCap, rng, p);
    check_engine(res);
    return res.t;
  });
  const double shift = std::log(static_cast<double>(n0)) + std::log(r.h_star);
  for (double t : r.times) r.centered.push_back(r.beta1 * t - shift);
  if (!r.times.empty()) {
    r.ks_standard = ks_statistic(r.centered, [](double x) { return gumbel_cdf(x); });
    r.ks_exact =
        ks_statistic(r.times, [&](double t) { return bd_extinction_cdf(t, r.lambda, r.mu, n0); });
  }
  if (r.centered.size() >= kMinFitSamples) r.fit = fit_gumbel(r.centered);
  return r;
}

ExtinctionResult extinction_experiment(const PopulationModel& model, std::int64_t n0, std::size_t replicas,
                                       std::uint64_t seed, unsigned threads) {
  return extinction_experiment(branching_from_model(model), n0, replicas, seed, threads);
}

ThreePhaseResult three_phase_run(double a1, double a2, double gamma, std::int64_t N, RngStream rng, double delta) {
  if (!(a2 > gamma * a1 && a1 < gamma * a2)) {
    throw std::invalid_argument("three_phase_run needs a2 > gamma a1 and a1 < gamma a2");
  }
  if (!(delta > 0.0)) throw std::invalid_argument("three_phase_run needs delta > 0");
  const std::vector<std::int64_t> Z0{1};
  const auto s = escape_setup(barebones(a1, a2, gamma, Phase::kInvasion), N, Z0, kDefaultAlpha);
  const CompiledModel cm(s.model);
  ThreePhaseResult out;
  out.N = N;
  out.seed = rng;
  const double n = static_cast<double>(N);
  out.T_N = (1.0 / (a2 - gamma * a1) + 1.0 / (gamma * a2 - a1)) * std::log(n);

  struct Phases {
    const EscapeSetup& s;
    double n, a2, delta;
    ThreePhaseResult& out;
    void hold(double, double, const double*, const double*, double) {}
    bool after_jump(double t, std::size_t, const double* X) {
      if (X[1] == 0.0) {
        if (!out.tau_star) out.phase1_extinction = t;
        return true;
      }
      if (!out.tau_star) {
        if (s.v[0] * X[1] >= s.level) out.tau_star = t;
        return false;
      }
      if (!out.ball_entry && std::hypot(X[0] / n, X[1] / n - a2) <= delta) out.ball_entry = t;
      if (X[0] == 0.0) {
        out.absorption = t;
        return true;
      }
      return false;
    }
  };
  Rng r(rng);
  std::vector<double> X = s.X0;
  Phases obs{s, n, a2, delta, out};
  check_engine(run_events(cm, X, 0.0, kInf, kDefaultEventCap, r, obs));
  out.survived = out.absorption.has_value();
  out.total = out.absorption;
  return out;
}

ClosenessResult path_closeness_experiment(const PopulationModel& model, std::span<const std::int64_t> N_list,
                                          std::span<const std::int64_t> Z0, std::size_t replicas, std::uint64_t seed,
                                          double T, std::size_t grid_points, unsigned threads) {
  if (grid_points < 2) throw std::invalid_argument("path_closeness_experiment needs at least 2 grid points");
  if (!(T >= 0.0)) throw std::invalid_argument("path_closeness_experiment needs T >= 0");
  ClosenessResult res;
  res.T = T;
  res.grid_points = grid_points;
  for (std::int64_t N : N_list) {
    const auto s = escape_setup(model, N, Z0, kDefaultAlpha);
    const double n = static_cast<double>(N);
    const double t_xi = ((1.0 - kDefaultAlpha) * std::log(n) - std::log(s.vz0)) / s.beta0;
    const double W = 5.0 / 12.0 / s.beta0 * std::log(n) + T;
    const double step = W / static_cast<double>(grid_points - 1);
    const auto flow = integrate(s.model, initial_flow_state(s), std::max(t_xi, 0.0) + W, 1e-10);
    std::vector<Vec> xi_grid;
    for (std::size_t k = 0; k < grid_points; ++k) xi_grid.push_back(flow.at(std::max(t_xi + step * k, 0.0)));

    struct GridError {
      const std::vector<Vec>& xi;
      double t0, step, n;
      std::size_t next = 0;
      double sup = 0.0;
      void record(const double* X) {
        double e2 = 0.0;
        for (Eigen::Index i = 0; i < xi[next].size(); ++i) e2 += std::pow(X[i] / n - xi[next][i], 2);
        sup = std::max(sup, std::sqrt(e2));
        ++next;
      }
      void hold(double, double t1, const double* X, const double*, double) {
        while (next < xi.size() && t0 + step * next < t1) record(X);
      }
      bool after_jump(double, std::size_t, const double*) { return false; }
    };

    const CompiledModel cm(s.model);
    const std::uint64_t sN = derive_seed(seed, static_cast<std::uint64_t>(N));
    const auto errs = parallel_map(replicas, threads, [&](std::size_t i) -> std::optional<double> {
      Rng rng({sN, i});
      std::vector<double> X = s.X0;
      EscapeStop stop{s, cm, std::nullopt, std::nullopt};
      check_engine(run_events(cm, X, 0.0, kInf, kDefaultEventCap, rng, stop));
      if (!stop.tau) return std::nullopt;
      GridError ge{xi_grid, *stop.tau, step, n};
      check_engine(run_events(cm, X, *stop.tau, *stop.tau + W, kDefaultEventCap, rng, ge));
      while (ge.next < xi_grid.size()) ge.record(X.data());
      return ge.sup;
    });
    ClosenessRow row;
    row.N = N;
    for (const auto& e : errs) {
      if (e) row.sup_errors.push_back(*e);
    }
    row.survivors = row.sup_errors.size();
    if (row.survivors == 0) {
      row.median = row.q90 = std::numeric_limits<double>::quiet_NaN();
      row.median_ci = {row.median, row.median, row.median};
    } else {
      row.median = quantile(row.sup_errors, 0.5);
      row.q90 = quantile(row.sup_errors, 0.9);
      row.median_ci = bootstrap_median_ci(row.sup_errors, 2000, derive_seed(sN, 1));
    }
    res.rows.push_back(std::move(row));
  }
  std::vector<double> lx, ly;
  for (const auto& row : res.rows) {
    if (row.survivors == 0) continue;
    lx.push_back(std::log(static_cast<double>(row.N)));
    ly.push_back(std::log(row.median));
  }
  if (lx.size() >= 2) res.slope = linear_regression(lx, ly);
  return res;
}

WShapeResult w_shape_experiment(const BranchingSpec& spec, std::span<const std::int64_t> Z0, double T,
                                std::size_t replicas, std::uint64_t seed, unsigned threads) {
  if (Z0.size() != spec.d2) throw std::invalid_argument("Z0 length does not match the branching spec");
  if (!(spec.spectral.beta0 > 0.0)) throw std::invalid_argument("w_shape_experiment needs a supercritical spec");
  if (!(T > 0.0)) throw std::invalid_argument("w_shape_experiment needs T > 0");
  WShapeResult r;
  r.Z0.assign(Z0.begin(), Z0.end());
  r.T = T;
  r.seed = seed;
  const CompiledModel cm(branching_as_model(spec));
  std::vector<double> X0(Z0.begin(), Z0.end());
  const double decay = std::exp(-spec.spectral.beta0 * T);
  struct Passive {
    void hold(double, double, const double*, const double*, double) {}
    bool after_jump(double, std::size_t, const double*) { return false; }
  };
  r.W = parallel_map(replicas, threads, [&](std::size_t i) {
    Rng rng({seed, i});
    std::vector<double> X = X0;
    Passive p;
    check_engine(run_events(cm, X, 0.0, T, kDefaultEventCap, rng, p));
    double w = 0.0;
    for (std::size_t k = 0; k < X.size(); ++k) w += spec.spectral.v[static_cast<Eigen::Index>(k)] * X[k];
    return w * decay;
  });
  for (double w : r.W) {
    if (w > 0.0) r.positive.push_back(w);
  }
  r.extinct = wilson(r.W.size() - r.positive.size(), r.W.size());
  if (r.positive.size() >= kMinFitSamples) r.fit = fit_gamma(r.positive);
  r.candidate_scales = {1.0};
  if (spec.d2 == 1) {
    double lambda = 0.0, mu = 0.0;
    bool bd = true;
    for (const auto& ev : spec.events) {
      if (ev.J2[0] == 1) {
        lambda += ev.per_capita_rate;
      } else if (ev.J2[0] == -1) {
        mu += ev.per_capita_rate;
      } else {
        bd = false;
      }
    }
    if (bd) r.candidate_scales.push_back(lambda / (lambda - mu));
  }
  return r;
}

std::string escape_csv(const EscapeDelayResult& r) {
  CsvTable t({"replica", "survived", "tau_star", "delay", "scaled_delay", "W_est"});
  for (const auto& rs : r.replicas) {
    t.add_row({format_number(rs.seed.stream_id), rs.survived ? "1" : "0", format_optional(rs.tau_star),
               format_optional(rs.delay), rs.delay ? format_number(r.beta0 * *rs.delay) : "",
               format_optional(rs.W_est)});
  }
  return t.str();
}

nlohmann::json escape_json(const EscapeDelayResult& r) {
  auto j = header_json("escape");
  j["N"] = r.N;
  j["Z0"] = r.Z0;
  j["alpha"] = r.alpha;
  j["seed"] = r.seed;
  j["replicas"] = r.replicas.size();
  j["beta0"] = r.beta0;
  j["level"] = r.level;
  j["t_xi"] = r.t_xi;
  j["t_xi_flow"] = opt_json(r.t_xi_flow);
  j["t_xi_discrepancy"] = r.t_xi_flow ? nlohmann::json(*r.t_xi_flow - r.t_xi) : nlohmann::json(nullptr);
  j["survival"] = ci_json(r.survival);
  j["tau"] = mean_json(r.tau);
  j["scaled_delay"] = mean_json(r.scaled_delay);
  j["gumbel_fit"] = gumbel_json(r.fit);
  if (!r.fit) j["fit_refused"] = "fewer than 200 surviving replicas";
  return j;
}

std::string extinction_csv(const ExtinctionResult& r) {
  CsvTable t({"replica", "extinction_time", "centered"});
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    t.add_row({format_number(static_cast<std::uint64_t>(i)), format_number(r.times[i]), format_number(r.centered[i])});
  }
  return t.str();
}

nlohmann::json extinction_json(const ExtinctionResult& r) {
  auto j = header_json("extinction");
  j["n0"] = r.n0;
  j["seed"] = r.seed;
  j["replicas"] = r.times.size();
  j["lambda"] = r.lambda;
  j["mu"] = r.mu;
  j["beta1"] = r.beta1;
  j["h_star"] = r.h_star;
  j["ks_standard_gumbel"] = r.ks_standard.statistic;
  j["ks_exact_cdf"] = r.ks_exact.statistic;
  j["gumbel_fit"] = gumbel_json(r.fit);
  return j;
}

std::string three_phase_csv(std::span<const ThreePhaseResult> runs) {
  CsvTable t({"replica", "N", "survived", "phase1_extinction", "tau_star", "ball_entry", "absorption", "T_N"});
  for (const auto& r : runs) {
    t.add_row({format_number(r.seed.stream_id), format_number(r.N), r.survived ? "1" : "0",
               format_optional(r.phase1_extinction), format_optional(r.tau_star), format_optional(r.ball_entry),
               format_optional(r.absorption), format_number(r.T_N)});
  }
  return t.str();
}

nlohmann::json three_phase_json(std::span<const ThreePhaseResult> runs) {
  auto j = header_json("three-phase");
  std::vector<double> totals, p1, p2, p3;
  for (const auto& r : runs) {
    if (!r.survived) continue;
    totals.push_back(*r.total);
    p1.push_back(*r.tau_star);
    if (r.ball_entry) {
      p2.push_back(*r.ball_entry - *r.tau_star);
      p3.push_back(*r.absorption - *r.ball_entry);
    }
  }
  j["replicas"] = runs.size();
  j["survivors"] = totals.size();
  if (!runs.empty()) {
    j["N"] = runs.front().N;
    j["seed"] = runs.front().seed.seed;
    j["T_N"] = runs.front().T_N;
  }
  auto summary = [](const std::vector<double>& x) { return x.empty() ? nlohmann::json(nullptr) : mean_json(mean_se(x)); };
  j["total"] = summary(totals);
  j["phase1"] = summary(p1);
  j["phase2"] = summary(p2);
  j["phase3"] = summary(p3);
  return j;
}

std::string closeness_csv(const ClosenessResult& r) {
  CsvTable t({"N", "replica_rank", "sup_error"});
  for (const auto& row : r.rows) {
    for (std::size_t i = 0; i < row.sup_errors.size(); ++i) {
      t.add_row({format_number(row.N), format_number(static_cast<std::uint64_t>(i)), format_number(row.sup_errors[i])});
    }
  }
  return t.str();
}

nlohmann::json closeness_json(const ClosenessResult& r) {
  auto j = header_json("closeness");
  j["T"] = r.T;
  j["grid_points"] = r.grid_points;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"N", row.N},
                         {"survivors", row.survivors},
                         {"median", row.median},
                         {"q90", row.q90},
                         {"median_ci_low", row.median_ci.lo},
                         {"median_ci_high", row.median_ci.hi}});
  }
  j["log_median_slope"] = r.slope.slope;
  j["log_median_slope_se"] = r.slope.slope_se;
  return j;
}

std::string w_shape_csv(const WShapeResult& r) {
  CsvTable t({"replica", "W"});
  for (std::size_t i = 0; i < r.W.size(); ++i) t.add_row({format_number(static_cast<std::uint64_t>(i)), format_number(r.W[i])});
  return t.str();
}

nlohmann::json w_shape_json(const WShapeResult& r) {
  auto j = header_json("w-shape");
  j["Z0"] = r.Z0;
  j["T"] = r.T;
  j["seed"] = r.seed;
  j["replicas"] = r.W.size();
  j["extinct"] = ci_json(r.extinct);
  j["positive_W"] = r.positive.empty() ? nlohmann::json(nullptr) : mean_json(mean_se(r.positive));
  if (r.fit) {
    j["gamma_fit"] = {{"shape", r.fit->shape}, {"scale", r.fit->scale}, {"ks_stat", r.fit->ks_stat}, {"n", r.fit->n}};
  } else {
    j["gamma_fit"] = nullptr;
  }
  j["candidate_scales"] = r.candidate_scales;
  return j;
}

}  // namespace mpp
