#include "mpp/branching.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "mpp/parallel.hpp"

namespace mpp {

BranchingSpec make_branching_spec(std::size_t d2, std::vector<BranchingEvent> events) {
  if (d2 == 0) throw std::invalid_argument("branching spec needs at least one type");
  if (events.empty()) throw std::invalid_argument("branching spec needs at least one event");
  BranchingSpec spec;
  spec.d2 = d2;
  spec.mean_matrix = Mat::Zero(static_cast<Eigen::Index>(d2), static_cast<Eigen::Index>(d2));
  for (const auto& e : events) {
    if (e.J2.size() != d2) throw std::invalid_argument("branching event J2 has wrong length");
    if (e.s >= d2) throw std::invalid_argument("branching event type index out of range");
    if (!(e.per_capita_rate > 0.0)) throw std::invalid_argument("branching event per-capita rate must be positive");
    for (std::size_t i = 0; i < d2; ++i) {
      if (i != e.s && e.J2[i] < 0) throw std::invalid_argument("branching event removes a non-parent type");
    }
    if (e.J2[e.s] < -1) throw std::invalid_argument("branching event removes more than the parent");
    for (std::size_t i = 0; i < d2; ++i) {
      spec.mean_matrix(static_cast<Eigen::Index>(e.s), static_cast<Eigen::Index>(i)) += e.J2[i] * e.per_capita_rate;
    }
  }
  spec.events = std::move(events);
  spec.spectral = perron(spec.mean_matrix.transpose());
  return spec;
}

BranchingSpec branching_from_model(const PopulationModel& model) {
  const auto rep = validate_model(model);
  if (!rep.passed) {
    throw ModelError("branching_from_model needs a valid model; first violation: " + rep.violations.front().id);
  }
  std::vector<BranchingEvent> events;
  for (std::size_t k = 0; k < model.jumps.size(); ++k) {
    const auto& j = model.jumps[k];
    if (!model.changes_second_block(j)) continue;
    BranchingEvent e;
    e.J2.assign(j.delta.begin() + static_cast<long>(model.d1), j.delta.end());
    e.s = *j.s - model.d1;
    e.per_capita_rate = gbar(model, k)(model.x0);
    if (!(e.per_capita_rate > 0.0)) throw ModelError("gbar^J(x0) <= 0 for jump " + std::to_string(k));
    events.push_back(std::move(e));
  }
  if (events.empty()) throw ModelError("model has no second-block jumps");
  return make_branching_spec(model.d2(), std::move(events));
}

BranchingSpec birth_death_spec(double lambda, double mu) {
  std::vector<BranchingEvent> events;
  if (lambda != 0.0) events.push_back({{1}, 0, lambda});
  if (mu != 0.0) events.push_back({{-1}, 0, mu});
  return make_branching_spec(1, std::move(events));
}

PopulationModel branching_as_model(const BranchingSpec& spec) {
  PopulationModel m;
  m.name = "branching";
  m.d = spec.d2;
  m.d1 = 0;
  m.N = 1;
  m.x0.assign(spec.d2, 0.0);
  for (const auto& e : spec.events) {
    Monomial mono{e.per_capita_rate, std::vector<int>(spec.d2, 0)};
    mono.powers[e.s] = 1;
    m.jumps.push_back({e.J2, PolynomialRate{{mono}}, e.s});
  }
  return m;
}

TrajectoryRecord simulate_z(const BranchingSpec& spec, std::span<const std::int64_t> Z0, double horizon,
                            std::uint64_t cap, RngStream rng, const SimOptions& opts, std::vector<StopSpec> extra_stops) {
  const auto model = branching_as_model(spec);
  std::vector<StopSpec> stops{StopSpec::horizon(horizon), StopSpec::event_cap(static_cast<double>(cap))};
  stops.insert(stops.end(), extra_stops.begin(), extra_stops.end());
  return simulate(model, Z0, stops, rng, opts);
}

WEstimate estimate_W(const TrajectoryRecord& traj, const SpectralData& spectral, double T) {
  if (!(spectral.beta0 > 0.0)) throw std::invalid_argument("estimate_W needs a supercritical spec (beta0 > 0)");
  if (T < 0.0) throw std::invalid_argument("estimate_W: T must be non-negative");
  const auto Z = state_at(traj, T);
  const auto& m = *traj.model;
  WEstimate w;
  w.T = T;
  double vz = 0.0;
  bool zero = true;
  for (std::size_t i = m.d1; i < m.d; ++i) {
    vz += spectral.v[static_cast<Eigen::Index>(i - m.d1)] * static_cast<double>(Z[i]);
    zero = zero && Z[i] == 0;
  }
  w.extinct = zero;
  w.value = zero ? 0.0 : vz * std::exp(-spectral.beta0 * T);
  return w;
}

ProportionCI survival_probability(const BranchingSpec& spec, std::span<const std::int64_t> Z0, std::size_t replicas,
                                  std::uint64_t seed, unsigned threads) {
  if (replicas < 100) throw std::invalid_argument("survival_probability needs at least 100 replicas");
  if (Z0.size() != spec.d2) throw std::invalid_argument("Z0 length does not match the number of types");
  const Vec& v = spec.spectral.v;
  double vz0 = 0.0;
  for (std::size_t i = 0; i < spec.d2; ++i) vz0 += v[static_cast<Eigen::Index>(i)] * static_cast<double>(Z0[i]);
  const std::vector<double> vv(v.data(), v.data() + v.size());
  const std::vector<std::int64_t> z0(Z0.begin(), Z0.end());
  const auto hits = parallel_map(replicas, threads, [&](std::size_t r) -> int {
    const auto traj = simulate_z(spec, z0, std::numeric_limits<double>::infinity(), kDefaultEventCap,
                                 {seed, r}, {}, {StopSpec::second_block_zero(), StopSpec::weighted_level(vv, 1e3 * vz0)});
    return traj.reason == TerminalReason::kStopHit && traj.stop_index == 3 ? 1 : 0;
  });
  std::size_t k = 0;
  for (int h : hits) k += static_cast<std::size_t>(h);
  return wilson(k, replicas);
}

namespace {

struct ReplicaDiag {
  std::vector<char> e1_fail;
  std::vector<char> e2_fail;
  std::vector<Vec> mart;
  std::vector<double> secondary;
};

}  // namespace

AppendixBResult appendixB_diagnostics(const BranchingSpec& spec, std::span<const std::int64_t> Z0,
                                      std::span<const double> t_grid, std::size_t replicas, std::uint64_t seed,
                                      const AppendixBParams& params, unsigned threads) {
  const auto& sp = spec.spectral;
  const double beta0 = sp.beta0;
  if (!(beta0 > 0.0)) throw std::invalid_argument("appendixB_diagnostics needs a supercritical spec");
  if (Z0.size() != spec.d2) throw std::invalid_argument("Z0 length does not match the number of types");
  AppendixBResult result;
  result.T_max = params.T_max.value_or(std::log(1e4) / beta0);
  if (params.chi) {
    result.chi = *params.chi;
  } else {
    const double delta = std::isfinite(sp.gap) ? 0.9 * sp.gap : std::numeric_limits<double>::infinity();
    result.chi = std::isfinite(delta) ? delta * beta0 / (2.0 * (beta0 + 2.0 * delta)) : beta0 / 4.0;
  }
  for (double t : t_grid) {
    if (t < 0.0 || t > result.T_max) throw std::invalid_argument("appendixB_diagnostics: grid exceeds T_max");
  }
  const auto n = static_cast<Eigen::Index>(spec.d2);
  const Mat Fm = beta0 * Mat::Identity(n, n) - sp.B0;

  // Secondary eigenpair for two-type specs: w^T B0 = beta' w^T.
  std::optional<std::pair<double, Vec>> second;
  if (spec.d2 == 2) {
    Eigen::EigenSolver<Mat> es(sp.B0.transpose());
    for (Eigen::Index k = 0; k < 2; ++k) {
      const auto lam = es.eigenvalues()[k];
      if (std::abs(lam.imag()) > 1e-12 || std::abs(lam.real() - beta0) < 1e-9) continue;
      Vec w = es.eigenvectors().col(k).real();
      Eigen::Index arg = 0;
      w.cwiseAbs().maxCoeff(&arg);
      w /= w[arg];
      if (w[0] < 0.0) w = -w;
      second = std::pair{lam.real(), w};
    }
  }

  const std::vector<std::int64_t> z0(Z0.begin(), Z0.end());
  const std::vector<double> grid(t_grid.begin(), t_grid.end());
  const CompiledModel cm(branching_as_model(spec));
  const std::size_t nz = spec.d2;

  const auto diags = parallel_map(replicas, threads, [&](std::size_t r) {
    // Piecewise-constant path: piece k holds state z[k*nz..] on [a[k], a[k+1]).
    struct PieceLog {
      std::size_t nz;
      std::vector<double> a;
      std::vector<double> z;
      void hold(double t0, double, const double* X, const double*, double) {
        a.push_back(t0);
        z.insert(z.end(), X, X + nz);
      }
      bool after_jump(double, std::size_t, const double*) { return false; }
    } log{nz, {}, {}};
    std::vector<double> X(z0.begin(), z0.end());
    Rng rng({seed, r});
    const auto res = run_events(cm, X, 0.0, result.T_max, kDefaultEventCap, rng, log);
    if (res.reason == TerminalReason::kEventCap) throw std::runtime_error("appendixB_diagnostics: event cap reached");
    if (res.reason == TerminalReason::kAbsorbed) log.hold(res.t, result.T_max, X.data(), nullptr, 0.0);
    const std::size_t P = log.a.size();
    log.a.push_back(result.T_max);
    auto piece = [&](std::size_t k) { return Eigen::Map<const Vec>(&log.z[k * nz], n); };
    const double W = sp.v.dot(piece(P - 1)) * std::exp(-beta0 * result.T_max);

    auto e1 = [&](std::size_t k, double u) { return std::abs(sp.v.dot(piece(k)) * std::exp(-beta0 * u) - W); };
    auto e2 = [&](std::size_t k, double u) { return (piece(k) * std::exp(-beta0 * u) - W * sp.u).norm(); };
    // Extremes over a piece are attained at its endpoints (monotone / convex in e^{-beta0 u}).
    std::vector<double> suf1(P + 1, 0.0);
    std::vector<double> suf2(P + 1, 0.0);
    for (std::size_t k = P; k-- > 0;) {
      suf1[k] = std::max({suf1[k + 1], e1(k, log.a[k]), e1(k, log.a[k + 1])});
      suf2[k] = std::max({suf2[k + 1], e2(k, log.a[k]), e2(k, log.a[k + 1])});
    }

    ReplicaDiag out;
    Vec integral = Vec::Zero(n);
    std::size_t k = 0;
    double done_to = 0.0;
    Vec N0 = Vec::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) N0[i] = static_cast<double>(z0[static_cast<std::size_t>(i)]);
    for (double g : grid) {
      while (k + 1 < P && log.a[k + 1] <= g) {
        integral += Fm * piece(k) * ((std::exp(-beta0 * done_to) - std::exp(-beta0 * log.a[k + 1])) / beta0);
        done_to = log.a[k + 1];
        ++k;
      }
      const Vec zk = piece(k);
      integral += Fm * zk * ((std::exp(-beta0 * done_to) - std::exp(-beta0 * g)) / beta0);
      done_to = g;
      const double s1 = std::max({suf1[k + 1], e1(k, g), e1(k, log.a[k + 1])});
      const double s2 = std::max({suf2[k + 1], e2(k, g), e2(k, log.a[k + 1])});
      out.e1_fail.push_back(s1 > params.a * std::exp(-beta0 * g / 2.0) ? 1 : 0);
      out.e2_fail.push_back(W > 0.0 && s2 > params.K * std::exp(-result.chi * g) ? 1 : 0);
      out.mart.push_back(zk * std::exp(-beta0 * g) + integral - N0);
      if (second) out.secondary.push_back(second->second.dot(zk) * std::exp(-second->first * g));
    }
    return out;
  });

  const double R = static_cast<double>(replicas);
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    AppendixBRow row;
    row.t = grid[gi];
    double f1 = 0.0;
    double f2 = 0.0;
    Vec sum = Vec::Zero(n);
    Vec sum2 = Vec::Zero(n);
    for (const auto& d : diags) {
      f1 += d.e1_fail[gi];
      f2 += d.e2_fail[gi];
      sum += d.mart[gi];
      sum2 += d.mart[gi].cwiseProduct(d.mart[gi]);
    }
    row.e1_fail_rate = f1 / R;
    row.e2_fail_rate = f2 / R;
    row.mart_mean = sum / R;
    const Vec var = ((sum2 / R) - row.mart_mean.cwiseProduct(row.mart_mean)) * (R / std::max(R - 1.0, 1.0));
    row.mart_se = (var.cwiseMax(0.0) / R).cwiseSqrt();
    row.mart_mean_dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dev = std::abs(row.mart_mean[i]);
      row.mart_mean_dev = std::max(row.mart_mean_dev, row.mart_se[i] > 0.0 ? dev / row.mart_se[i] : (dev > 0.0 ? INFINITY : 0.0));
    }
    result.rows.push_back(std::move(row));
    if (second) {
      std::vector<double> vals;
      vals.reserve(diags.size());
      for (const auto& d : diags) vals.push_back(d.secondary[gi]);
      result.secondary.push_back(mean_se(vals));
    }
  }
  return result;
}

}  // namespace mpp
