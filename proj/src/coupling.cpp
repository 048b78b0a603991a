#include "mpp/coupling.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mpp/output.hpp"
#include "mpp/parallel.hpp"
#include "mpp/spectral.hpp"

namespace mpp {

const char* to_string(CouplingMethod m) {
  return m == CouplingMethod::kStepwise ? "stepwise" : "maximal";
}

const char* to_string(DivergenceCause c) {
  switch (c) {
    case DivergenceCause::kRateMismatchJump: return "rate_mismatch_jump";
    case DivergenceCause::kExtraJumpX: return "extra_jump_x";
    case DivergenceCause::kExtraJumpZ: return "extra_jump_z";
  }
  return "unknown";
}

const char* to_string(TVMethod m) { return m == TVMethod::kCouplingBound ? "coupling_bound" : "lr_formula"; }

namespace {

struct Setup {
  std::size_t d = 0;
  std::size_t d1 = 0;
  std::vector<double> X0;
  std::vector<double> v;
  double level = 0.0;
};

Setup make_setup(const PopulationModel& model, std::span<const std::int64_t> Z0, double alpha) {
  const auto st = structure_at(model, model.x0);
  const auto sp = perron(st.B0);
  if (!(sp.beta0 > 0.0)) throw std::invalid_argument("couple_run needs the invasion regime (beta0 > 0)");
  if (Z0.size() != model.d2()) throw std::invalid_argument("Z0 length does not match the second block");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  Setup s;
  s.d = model.d;
  s.d1 = model.d1;
  const double N = static_cast<double>(model.N);
  for (std::size_t i = 0; i < model.d1; ++i) s.X0.push_back(std::round(N * model.x0[i]));
  double vz0 = 0.0;
  for (std::size_t i = 0; i < Z0.size(); ++i) {
    if (Z0[i] < 0) throw std::invalid_argument("Z0 must be non-negative");
    s.X0.push_back(static_cast<double>(Z0[i]));
    s.v.push_back(sp.v[static_cast<Eigen::Index>(i)]);
    vz0 += s.v.back() * static_cast<double>(Z0[i]);
  }
  s.level = std::pow(N, 1.0 - alpha) + vz0;
  return s;
}

bool block_zero(const Setup& s, const double* X) {
  for (std::size_t i = s.d1; i < s.d; ++i) {
    if (X[i] != 0.0) return false;
  }
  return true;
}

double weighted(const Setup& s, const double* X) {
  double w = 0.0;
  for (std::size_t i = s.d1; i < s.d; ++i) w += s.v[i - s.d1] * X[i];
  return w;
}

std::vector<std::int64_t> second_block(const Setup& s, const std::vector<double>& X) {
  std::vector<std::int64_t> z;
  for (std::size_t i = s.d1; i < s.d; ++i) z.push_back(static_cast<std::int64_t>(X[i]));
  return z;
}

CoupledRun run_stepwise(const PopulationModel& model, const Setup& s, double horizon, RngStream stream,
                        const CoupleOptions& opts) {
  const CompiledModel cm(model);
  const std::size_t nj = cm.num_jumps();
  if (nj > kMaxJumps) throw std::invalid_argument("too many jumps for the simulation engine");
  CoupledRun out;
  Rng rng(stream);
  std::vector<double> X = s.X0;
  double rates[kMaxJumps];
  double eff[kMaxJumps];
  double t = 0.0;
  if (block_zero(s, X.data())) {
    out.z_extinct_first = true;
    out.z_final = second_block(s, X);
    return out;
  }
  for (;;) {
    cm.rates(X.data(), rates);
    double total = 0.0;
    for (std::size_t j = 0; j < nj; ++j) {
      if (!(rates[j] >= 0.0)) throw SimulationError("negative rate for jump " + std::to_string(j), X, t);
      eff[j] = cm.second_block(j) ? std::max(rates[j], X[cm.s(j)] * cm.gbar0(j)) : rates[j];
      total += eff[j];
    }
    if (!(total > 0.0) || out.event_count >= opts.event_cap) break;
    const double tn = t + rng.exponential() / total;
    if (tn > horizon) {
      t = horizon;
      break;
    }
    double u = rng.uniform() * total;
    std::size_t j = 0;
    std::size_t last_positive = 0;
    for (; j < nj; ++j) {
      if (eff[j] > 0.0) last_positive = j;
      if (u < eff[j]) break;
      u -= eff[j];
    }
    if (j == nj) j = last_positive;
    t = tn;
    ++out.event_count;
    const int* dj = cm.delta(j);
    if (cm.second_block(j)) {
      const double qx = rates[j];
      const double qz = X[cm.s(j)] * cm.gbar0(j);
      if (qx != qz && !(rng.uniform() * std::max(qx, qz) < std::min(qx, qz))) {
        out.diverged = true;
        out.divergence_time = t;
        out.divergence_cause = qx > qz ? DivergenceCause::kExtraJumpX : DivergenceCause::kExtraJumpZ;
        auto z = second_block(s, X);
        if (qz > qx) {
          for (std::size_t i = s.d1; i < s.d; ++i) z[i - s.d1] += dj[i];
        }
        out.z_final = std::move(z);
        out.end_time = t;
        return out;
      }
    }
    for (std::size_t i = 0; i < s.d; ++i) {
      X[i] += dj[i];
      if (X[i] < 0.0) throw SimulationError("state component " + std::to_string(i) + " went negative", X, t);
    }
    if (cm.second_block(j)) {
      if (block_zero(s, X.data())) {
        out.z_extinct_first = true;
        break;
      }
      if (weighted(s, X.data()) >= s.level) {
        out.tau_star = t;
        break;
      }
    }
  }
  out.end_time = t;
  out.z_final = second_block(s, X);
  return out;
}

// Accumulates log R = sum log(gbar(x)/gbar(x0)) over second-block jumps minus
// int sum_J (gbar_J(x) - gbar_J(x0)) x_s dt, and applies the stop rules.
class RatioObserver {
 public:
  RatioObserver(const CompiledModel& cm, const Setup& s, bool log_events) : cm_(cm), s_(s), log_events_(log_events) {
    for (std::size_t j = 0; j < cm.num_jumps(); ++j) {
      if (cm.second_block(j)) sb_.push_back(j);
    }
  }

  void hold(double t0, double t1, const double* X, const double*, double) {
    double acc = 0.0;
    for (std::size_t j : sb_) {
      gb_[j] = cm_.gbar(j, X);
      acc += (gb_[j] - cm_.gbar0(j)) * X[cm_.s(j)];
    }
    integral_ += acc * (t1 - t0);
  }

  bool after_jump(double t, std::size_t j, const double* X) {
    if (!cm_.second_block(j)) return false;
    if (gb_[j] > 0.0) {
      log_sum_ += std::log(gb_[j] / cm_.gbar0(j));
    } else {
      log_sum_ = -std::numeric_limits<double>::infinity();
    }
    if (log_events_) events_.push_back({t, static_cast<std::uint32_t>(j)});
    if (block_zero(s_, X)) {
      extinct_ = true;
      return true;
    }
    if (weighted(s_, X) >= s_.level) {
      tau_ = t;
      return true;
    }
    return false;
  }

  double log_ratio() const { return log_sum_ - integral_; }
  const std::vector<EventRecord>& events() const { return events_; }
  bool extinct() const { return extinct_; }
  std::optional<double> tau() const { return tau_; }

 private:
  const CompiledModel& cm_;
  const Setup& s_;
  bool log_events_;
  std::vector<std::size_t> sb_;
  double gb_[kMaxJumps] = {};
  double log_sum_ = 0.0;
  double integral_ = 0.0;
  std::vector<EventRecord> events_;
  bool extinct_ = false;
  std::optional<double> tau_;
};

CoupledRun run_maximal(const PopulationModel& model, const Setup& s, double horizon, RngStream stream,
                       const CoupleOptions& opts) {
  CoupledRun out;
  Rng rng(stream);
  std::vector<double> Y = s.X0;
  if (block_zero(s, Y.data())) {
    out.z_extinct_first = true;
    out.z_final = second_block(s, Y);
    out.log_ratio = 0.0;
    return out;
  }
  // Frozen second-block rates everywhere: the second block is the branching process.
  const CompiledModel frozen(model, 0.0);
  RatioObserver obs(frozen, s, opts.residual_draw);
  const auto res = run_events(frozen, Y, 0.0, horizon, opts.event_cap, rng, obs);
  out.event_count = res.events;
  out.end_time = res.t;
  out.z_final = second_block(s, Y);
  out.z_extinct_first = obs.extinct();
  const double lr = obs.log_ratio();
  out.log_ratio = lr;
  const double u = rng.uniform();
  if (std::log(u) < std::min(0.0, lr)) {
    out.tau_star = obs.tau();
    return out;
  }
  out.diverged = true;
  out.divergence_cause = DivergenceCause::kRateMismatchJump;
  if (!opts.residual_draw) return out;

  // Residual law: proposals from the population process accepted with (1 - 1/R)^+.
  const CompiledModel cm(model);
  for (std::size_t k = 0; k < opts.max_proposals; ++k) {
    ++out.proposals;
    std::vector<double> X = s.X0;
    RatioObserver xo(cm, s, true);
    const auto xr = run_events(cm, X, 0.0, horizon, opts.event_cap, rng, xo);
    out.event_count += xr.events;
    const double lx = xo.log_ratio();
    const double accept = lx > 0.0 ? -std::expm1(-lx) : 0.0;
    if (!(rng.uniform() < accept)) continue;
    const auto& ye = obs.events();
    const auto& xe = xo.events();
    std::size_t i = 0;
    while (i < ye.size() && i < xe.size() && ye[i].t == xe[i].t && ye[i].jump == xe[i].jump) ++i;
    if (i < ye.size() || i < xe.size()) {
      const double ty = i < ye.size() ? ye[i].t : std::numeric_limits<double>::infinity();
      const double tx = i < xe.size() ? xe[i].t : std::numeric_limits<double>::infinity();
      out.divergence_time = std::min(tx, ty);
      out.divergence_cause = tx < ty ? DivergenceCause::kExtraJumpX : DivergenceCause::kExtraJumpZ;
    }
    break;
  }
  return out;
}

}  // namespace

CoupledRun couple_run(const PopulationModel& model, std::span<const std::int64_t> Z0, double alpha, double horizon,
                      RngStream rng, const CoupleOptions& opts) {
  if (!(horizon >= 0.0)) throw std::invalid_argument("couple_run: horizon must be non-negative");
  const auto s = make_setup(model, Z0, alpha);
  return opts.method == CouplingMethod::kStepwise ? run_stepwise(model, s, horizon, rng, opts)
                                                  : run_maximal(model, s, horizon, rng, opts);
}

LRSample logistic_lr(std::int64_t N, std::size_t m, Rng& rng, std::span<const double> waiting_times) {
  if (N < 2) throw std::invalid_argument("logistic_lr: N must be at least 2");
  if (static_cast<std::int64_t>(m) >= N) throw std::invalid_argument("logistic_lr: need m < N");
  if (!waiting_times.empty() && waiting_times.size() != m) {
    throw std::invalid_argument("logistic_lr: waiting_times must have length m");
  }
  const double n = static_cast<double>(N);
  LRSample s;
  s.m = m;
  for (std::size_t k = 1; k <= m; ++k) {
    const double i = static_cast<double>(k);
    const double T = waiting_times.empty() ? rng.exponential() / i : waiting_times[k - 1];
    const double e = (i * i * T - i) / n;
    s.exponent += e;
    s.log_terms += i / n + std::log1p(-i / n) + e;
  }
  s.value = std::exp(s.log_terms);
  return s;
}

TVEstimate tv_lower_from_lr(std::span<const LRSample> samples) {
  if (samples.size() < 100) throw std::invalid_argument("tv_lower_from_lr needs at least 100 samples");
  std::vector<double> d;
  d.reserve(samples.size());
  for (const auto& s : samples) d.push_back(std::max(0.0, 1.0 - s.value));
  const auto ms = mean_se(d);
  return {ms.mean, ms.se, TVMethod::kLrFormula};
}

TVEstimate tv_from_coupling(std::size_t diverged, std::size_t n) {
  if (n == 0) throw std::invalid_argument("tv_from_coupling needs at least one run");
  const auto ci = wilson(diverged, n);
  return {ci.p, ci.se, TVMethod::kCouplingBound};
}

std::vector<DivergenceRow> divergence_curve(const PopulationModel& model, std::span<const std::int64_t> Z0,
                                            std::span<const std::int64_t> N_list, double alpha, std::size_t replicas,
                                            std::uint64_t seed, const CoupleOptions& opts, unsigned threads) {
  if (replicas == 0) throw std::invalid_argument("divergence_curve needs replicas > 0");
  std::vector<DivergenceRow> rows;
  const std::vector<std::int64_t> z0(Z0.begin(), Z0.end());
  for (std::int64_t N : N_list) {
    const auto m = model.with_scale(N);
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(N));
    const auto div = parallel_map(replicas, threads, [&](std::size_t r) {
      return couple_run(m, z0, alpha, std::numeric_limits<double>::infinity(), {s, r}, opts).diverged ? 1 : 0;
    });
    std::size_t k = 0;
    for (int x : div) k += static_cast<std::size_t>(x);
    rows.push_back({N, wilson(k, replicas)});
  }
  return rows;
}

std::string divergence_csv(std::span<const DivergenceRow> rows) {
  CsvTable t({"N", "divergence_fraction", "ci_low", "ci_high"});
  for (const auto& r : rows) {
    t.add_row({format_number(r.N), format_number(r.fraction.p), format_number(r.fraction.lo),
               format_number(r.fraction.hi)});
  }
  return t.str();
}

GapResult symmetric_gap_experiment(double eta, std::int64_t N, std::size_t replicas, std::uint64_t seed,
                                   unsigned threads) {
  if (!(eta > 0.0 && eta < 0.5)) throw std::invalid_argument("symmetric_gap_experiment needs 0 < eta < 1/2");
  const auto model = symmetric_two_type(eta, N);
  const CompiledModel cm(model);
  const double n = static_cast<double>(N);
  // v = (1, 1) for the symmetric mixing matrix.
  const double level = std::pow(n, 7.0 / 12.0) + 2.0;
  const double extra = 5.0 / 12.0 * std::log(n);

  struct LevelStop {
    double level;
    bool extinct = false;
    std::optional<double> tau;
    void hold(double, double, const double*, const double*, double) {}
    bool after_jump(double t, std::size_t, const double* X) {
      if (X[0] + X[1] == 0.0) {
        extinct = true;
        return true;
      }
      if (X[0] + X[1] >= level) {
        tau = t;
        return true;
      }
      return false;
    }
  };
  struct Passive {
    void hold(double, double, const double*, const double*, double) {}
    bool after_jump(double, std::size_t, const double*) { return false; }
  };

  const auto runs = parallel_map(replicas, threads, [&](std::size_t r) -> std::optional<double> {
    Rng rng({seed, r});
    std::vector<double> X{1.0, 1.0};
    LevelStop stop{level, false, std::nullopt};
    run_events(cm, X, 0.0, std::numeric_limits<double>::infinity(), kDefaultEventCap, rng, stop);
    if (!stop.tau) return std::nullopt;
    Passive p;
    const auto res = run_events(cm, X, *stop.tau, *stop.tau + extra, kDefaultEventCap, rng, p);
    if (res.reason == TerminalReason::kEventCap) throw std::runtime_error("symmetric_gap_experiment: event cap reached");
    return (X[0] - X[1]) / n;
  });
  GapResult g;
  g.eta = eta;
  g.N = N;
  g.replicas = replicas;
  const double scale = std::pow(n, 2.0 * eta);
  for (const auto& r : runs) {
    if (!r) continue;
    g.raw.push_back(*r);
    g.rescaled.push_back(scale * *r);
  }
  return g;
}

}  // namespace mpp
