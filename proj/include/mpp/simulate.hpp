#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpp/model.hpp"
#include "mpp/rng.hpp"

namespace mpp {

inline constexpr std::uint64_t kDefaultEventCap = 100'000'000ULL;

/// Raised when a rate turns negative or a state component would go negative.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, std::vector<double> state, double t)
      : std::runtime_error(what), state_(std::move(state)), t_(t) {}
  const std::vector<double>& state() const { return state_; }
  double time() const { return t_; }

 private:
  std::vector<double> state_;
  double t_;
};

/// Rates N g^J(X/N) compiled for fast evaluation on integer-valued states held
/// as doubles. Second-block jumps are evaluated as X_s * gbar^J(X/N); with a
/// finite theta, gbar^J is frozen at its x0 value whenever |X/N - x0| > theta.
class CompiledModel {
 public:
  explicit CompiledModel(const PopulationModel& model,
                         double theta = std::numeric_limits<double>::infinity());

  std::size_t dim() const { return d_; }
  std::size_t d1() const { return d1_; }
  std::size_t num_jumps() const { return nj_; }
  double scale() const { return N_; }
  const int* delta(std::size_t j) const { return &delta_[j * d_]; }
  bool second_block(std::size_t j) const { return sb_[j] != 0; }
  std::size_t s(std::size_t j) const { return s_[j]; }
  double gbar0(std::size_t j) const { return gbar0_[j]; }
  bool truncation_enabled() const { return std::isfinite(theta_); }

  /// |X/N - x0| > theta.
  bool truncated(const double* X) const {
    if (!truncation_enabled()) return false;
    double r2 = 0.0;
    for (std::size_t i = 0; i < d_; ++i) {
      const double e = X[i] * inv_N_ - x0_[i];
      r2 += e * e;
    }
    return r2 > theta2_;
  }

  /// gbar^J(X/N) from the unfrozen polynomial (second-block jumps only).
  double gbar(std::size_t j, const double* X) const { return eval_poly(j, X); }

  /// Fills out[0..num_jumps) and returns their sum.
  double rates(const double* X, double* out) const {
    const bool frozen = truncated(X);
    const Term* terms = terms_.data();
    double total = 0.0;
    for (std::size_t j = 0; j < nj_; ++j) {
      const JumpProg& p = prog_[j];
      double r;
      if (p.sb && frozen) {
        r = p.gbar0;
      } else {
        r = 0.0;
        for (std::uint32_t m = p.begin; m < p.end; ++m) r += eval_term(terms[m], X);
      }
      if (p.sb) r *= X[p.s];
      out[j] = r;
      total += r;
    }
    return total;
  }

 private:
  // Monomial coeff * prod X[idx[k]], k < nf.
  struct Term {
    double coeff;
    std::uint8_t nf;
    std::uint8_t idx[7];
  };
  struct JumpProg {
    std::uint32_t begin;
    std::uint32_t end;
    std::uint32_t s;
    bool sb;
    double gbar0;
  };

  static double eval_term(const Term& t, const double* X) {
    double v = t.coeff;
    for (std::uint8_t k = 0; k < t.nf; ++k) v *= X[t.idx[k]];
    return v;
  }

  double eval_poly(std::size_t j, const double* X) const {
    double r = 0.0;
    for (std::uint32_t m = prog_[j].begin; m < prog_[j].end; ++m) r += eval_term(terms_[m], X);
    return r;
  }

  std::size_t d_ = 0;
  std::size_t d1_ = 0;
  std::size_t nj_ = 0;
  double N_ = 1.0;
  double inv_N_ = 1.0;
  double theta_ = 0.0;
  double theta2_ = 0.0;
  std::vector<double> x0_;
  std::vector<int> delta_;
  std::vector<char> sb_;
  std::vector<std::size_t> s_;
  std::vector<double> gbar0_;
  std::vector<JumpProg> prog_;
  std::vector<Term> terms_;
};

enum class StopKind { kSecondBlockZero, kWeightedLevel, kTimeHorizon, kEventCap };

/// A stopping rule. Non-terminal rules only annotate the StoppingTimes.
struct StopSpec {
  StopKind kind = StopKind::kTimeHorizon;
  std::vector<double> v;
  std::optional<double> level;
  bool terminal = true;

  static StopSpec second_block_zero(bool terminal = true) { return {StopKind::kSecondBlockZero, {}, {}, terminal}; }
  static StopSpec weighted_level(std::vector<double> v, double level, bool terminal = true) {
    return {StopKind::kWeightedLevel, std::move(v), level, terminal};
  }
  static StopSpec horizon(double t) { return {StopKind::kTimeHorizon, {}, t, true}; }
  static StopSpec event_cap(double n) { return {StopKind::kEventCap, {}, n, true}; }
};

enum class TerminalReason { kHorizon, kAbsorbed, kEventCap, kStopHit };
const char* to_string(TerminalReason r);

struct StoppingTimes {
  std::optional<double> tau_x0;
  std::optional<double> tau_alpha;
  /// Second-block jumps made up to tau_alpha.
  std::optional<std::uint64_t> jump_count_at_tau;
};

struct EventRecord {
  double t;
  std::uint32_t jump;
};

struct Snapshot {
  double t;
  std::vector<double> x;  // densities X/N
};

struct TrajectoryRecord {
  std::shared_ptr<const PopulationModel> model;
  std::vector<std::int64_t> initial;
  bool events_logged = false;
  std::vector<EventRecord> events;
  std::vector<Snapshot> snapshots;
  TerminalReason reason = TerminalReason::kHorizon;
  std::optional<std::size_t> stop_index;
  double end_time = 0.0;
  std::vector<std::int64_t> final_state;
  std::uint64_t event_count = 0;
  StoppingTimes stopping;
  /// First time the truncated rates were in force (simulate_truncated only).
  std::optional<double> truncation_time;
};

struct SimOptions {
  bool log_events = false;
  /// Ascending times at which densities are recorded (right-continuous path).
  std::vector<double> snapshot_grid;
};

TrajectoryRecord simulate(const PopulationModel& model, std::span<const std::int64_t> X0,
                          const std::vector<StopSpec>& stops, RngStream rng, const SimOptions& opts = {});

TrajectoryRecord simulate_truncated(const PopulationModel& model, double theta, std::span<const std::int64_t> X0,
                                    const std::vector<StopSpec>& stops, RngStream rng, const SimOptions& opts = {});

/// Counts X(t) from a logged trajectory.
std::vector<std::int64_t> state_at(const TrajectoryRecord& traj, double t);

/// m_N(t) = x(t) - x(0) - int_0^t F(x(u)) du on the piecewise-constant path.
std::vector<Vec> martingale_path(const TrajectoryRecord& traj, std::span<const double> grid);

/// First event time with v . X^(2) >= level (0 when already true initially).
std::optional<double> first_crossing(const TrajectoryRecord& traj, std::span<const double> v, double level);

// --- generic event loop ----------------------------------------------------

struct EngineResult {
  TerminalReason reason = TerminalReason::kHorizon;
  double t = 0.0;
  std::uint64_t events = 0;
};

inline constexpr std::size_t kMaxJumps = 64;

/// Direct-method loop. The observer provides
///   void hold(double t0, double t1, const double* X, const double* rates, double total);
///   bool after_jump(double t, std::size_t j, const double* X);   // true stops the run
/// `X` is updated in place.
template <class Observer>
EngineResult run_events(const CompiledModel& cm, std::vector<double>& X, double t, double horizon,
                        std::uint64_t cap, Rng& rng, Observer& obs) {
  const std::size_t nj = cm.num_jumps();
  const std::size_t d = cm.dim();
  if (nj > kMaxJumps) throw std::invalid_argument("too many jumps for the simulation engine");
  double rates[kMaxJumps];
  EngineResult res;
  for (;;) {
    const double total = cm.rates(X.data(), rates);
    for (std::size_t j = 0; j < nj; ++j) {
      if (!(rates[j] >= 0.0)) throw SimulationError("negative rate for jump " + std::to_string(j), X, t);
    }
    if (!(total > 0.0)) {
      res.reason = TerminalReason::kAbsorbed;
      res.t = t;
      return res;
    }
    if (res.events >= cap) {
      res.reason = TerminalReason::kEventCap;
      res.t = t;
      return res;
    }
    const double tn = t + rng.exponential() / total;
    if (tn > horizon) {
      obs.hold(t, horizon, X.data(), rates, total);
      res.reason = TerminalReason::kHorizon;
      res.t = horizon;
      return res;
    }
    double u = rng.uniform() * total;
    std::size_t j = 0;
    std::size_t last_positive = 0;
    for (; j < nj; ++j) {
      if (rates[j] > 0.0) last_positive = j;
      if (u < rates[j]) break;
      u -= rates[j];
    }
    if (j == nj) j = last_positive;
    obs.hold(t, tn, X.data(), rates, total);
    const int* dj = cm.delta(j);
    for (std::size_t i = 0; i < d; ++i) {
      X[i] += dj[i];
      if (X[i] < 0.0) throw SimulationError("state component " + std::to_string(i) + " went negative", X, tn);
    }
    t = tn;
    ++res.events;
    if (obs.after_jump(t, j, X.data())) {
      res.reason = TerminalReason::kStopHit;
      res.t = t;
      return res;
    }
  }
}

}  // namespace mpp
