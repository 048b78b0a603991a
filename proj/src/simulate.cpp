#include "mpp/simulate.hpp"

#include <algorithm>
#include <cmath>

namespace mpp {

CompiledModel::CompiledModel(const PopulationModel& model, double theta)
    : d_(model.d), d1_(model.d1), nj_(model.jumps.size()), N_(static_cast<double>(model.N)),
      inv_N_(1.0 / static_cast<double>(model.N)), theta_(theta), theta2_(theta * theta), x0_(model.x0) {
  model.check_dimensions();
  if (!(theta >= 0.0)) throw std::invalid_argument("truncation radius theta must be non-negative");
  if (nj_ > kMaxJumps) throw std::invalid_argument("model has more than 64 jumps");
  if (d_ > 255) throw std::invalid_argument("model dimension above 255 is not supported by the simulator");
  for (std::size_t k = 0; k < nj_; ++k) {
    const auto& j = model.jumps[k];
    delta_.insert(delta_.end(), j.delta.begin(), j.delta.end());
    const bool sb = model.changes_second_block(j);
    sb_.push_back(sb ? 1 : 0);
    PolynomialRate poly = j.rate;
    double g0 = 0.0;
    if (sb) {
      // gbar(X/N) * X_s: each gbar monomial of degree k carries N^{-k}.
      poly = mpp::gbar(model, k);
      s_.push_back(*j.s);
      g0 = poly(model.x0);
    } else {
      s_.push_back(0);
    }
    gbar0_.push_back(g0);
    JumpProg p{static_cast<std::uint32_t>(terms_.size()), 0, static_cast<std::uint32_t>(s_.back()), sb, g0};
    for (const auto& m : poly.monomials) {
      if (m.coeff == 0.0) continue;
      const int exponent = sb ? -m.degree() : 1 - m.degree();
      Term t{m.coeff * std::pow(N_, exponent), 0, {}};
      for (std::size_t i = 0; i < d_; ++i) {
        for (int e = 0; e < m.powers[i]; ++e) {
          if (t.nf == sizeof(t.idx)) throw std::invalid_argument("monomial degree above 7 is not supported by the simulator");
          t.idx[t.nf++] = static_cast<std::uint8_t>(i);
        }
      }
      terms_.push_back(t);
    }
    p.end = static_cast<std::uint32_t>(terms_.size());
    prog_.push_back(p);
  }
}

const char* to_string(TerminalReason r) {
  switch (r) {
    case TerminalReason::kHorizon: return "horizon";
    case TerminalReason::kAbsorbed: return "absorbed";
    case TerminalReason::kEventCap: return "event_cap";
    case TerminalReason::kStopHit: return "stop_hit";
  }
  return "unknown";
}

namespace {

class TrajectoryObserver {
 public:
  TrajectoryObserver(const CompiledModel& cm, TrajectoryRecord& rec, const std::vector<StopSpec>& stops,
                     const SimOptions& opts)
      : cm_(cm), rec_(rec), stops_(stops), opts_(opts), d_(cm.dim()), d1_(cm.d1()) {}

  // Evaluates the stop rules on the current state; returns true if a terminal one fired.
  bool check_stops(double t, const double* X) {
    bool stop = false;
    for (std::size_t k = 0; k < stops_.size(); ++k) {
      const auto& sp = stops_[k];
      bool hit = false;
      if (sp.kind == StopKind::kSecondBlockZero) {
        hit = second_block_zero(X);
      } else if (sp.kind == StopKind::kWeightedLevel) {
        double w = 0.0;
        for (std::size_t i = d1_; i < d_; ++i) w += sp.v[i - d1_] * X[i];
        hit = w >= *sp.level;
        if (hit && k == first_level_ && !rec_.stopping.tau_alpha) {
          rec_.stopping.tau_alpha = t;
          rec_.stopping.jump_count_at_tau = sb_jumps_;
        }
      }
      if (hit && sp.terminal && !stop) {
        stop = true;
        rec_.stop_index = k;
      }
    }
    if (d_ > d1_ && !rec_.stopping.tau_x0 && second_block_zero(X)) rec_.stopping.tau_x0 = t;
    return stop;
  }

  void set_first_level(std::size_t k) { first_level_ = k; }

  void hold(double t0, double t1, const double* X, const double*, double) {
    if (cm_.truncation_enabled() && !rec_.truncation_time && cm_.truncated(X)) rec_.truncation_time = t0;
    const auto& grid = opts_.snapshot_grid;
    while (grid_pos_ < grid.size() && grid[grid_pos_] < t1) {
      if (grid[grid_pos_] >= t0) push_snapshot(grid[grid_pos_], X);
      ++grid_pos_;
    }
  }

  bool after_jump(double t, std::size_t j, const double* X) {
    if (opts_.log_events) rec_.events.push_back({t, static_cast<std::uint32_t>(j)});
    if (!cm_.second_block(j)) {
      // Only second-block changes can trigger stop rules.
      return false;
    }
    ++sb_jumps_;
    return check_stops(t, X);
  }

  void fill_remaining(double up_to, const double* X) {
    const auto& grid = opts_.snapshot_grid;
    while (grid_pos_ < grid.size() && grid[grid_pos_] <= up_to) push_snapshot(grid[grid_pos_++], X);
  }

 private:
  bool second_block_zero(const double* X) const {
    for (std::size_t i = d1_; i < d_; ++i) {
      if (X[i] != 0.0) return false;
    }
    return true;
  }

  void push_snapshot(double t, const double* X) {
    Snapshot s{t, std::vector<double>(d_)};
    for (std::size_t i = 0; i < d_; ++i) s.x[i] = X[i] / cm_.scale();
    rec_.snapshots.push_back(std::move(s));
  }

  const CompiledModel& cm_;
  TrajectoryRecord& rec_;
  const std::vector<StopSpec>& stops_;
  const SimOptions& opts_;
  std::size_t d_;
  std::size_t d1_;
  std::size_t grid_pos_ = 0;
  std::size_t first_level_ = static_cast<std::size_t>(-1);
  std::uint64_t sb_jumps_ = 0;
};

TrajectoryRecord run_simulation(const PopulationModel& model, double theta, std::span<const std::int64_t> X0,
                                const std::vector<StopSpec>& stops, RngStream stream, const SimOptions& opts) {
  const CompiledModel cm(model, theta);
  if (X0.size() != model.d) throw std::invalid_argument("X0 length does not match model dimension");
  for (auto x : X0) {
    if (x < 0) throw std::invalid_argument("X0 must be non-negative");
  }
  if (!std::is_sorted(opts.snapshot_grid.begin(), opts.snapshot_grid.end())) {
    throw std::invalid_argument("snapshot grid must be ascending");
  }
  double horizon = std::numeric_limits<double>::infinity();
  std::uint64_t cap = kDefaultEventCap;
  bool terminating = false;
  std::optional<std::size_t> first_level;
  for (std::size_t k = 0; k < stops.size(); ++k) {
    const auto& sp = stops[k];
    switch (sp.kind) {
      case StopKind::kTimeHorizon:
        if (!sp.level || !(*sp.level >= 0.0)) throw std::invalid_argument("time_horizon stop needs a level >= 0");
        horizon = std::min(horizon, *sp.level);
        terminating = true;
        break;
      case StopKind::kEventCap:
        if (!sp.level || !(*sp.level >= 0.0)) throw std::invalid_argument("event_cap stop needs a level >= 0");
        cap = std::min<std::uint64_t>(cap, static_cast<std::uint64_t>(*sp.level));
        terminating = true;
        break;
      case StopKind::kWeightedLevel:
        if (!sp.level || sp.v.size() != model.d2()) {
          throw std::invalid_argument("weighted_level stop needs a level and a weight vector of length d2");
        }
        if (!first_level) first_level = k;
        break;
      case StopKind::kSecondBlockZero:
        if (model.d2() == 0) throw std::invalid_argument("second_block_zero stop needs a non-empty second block");
        break;
    }
  }
  if (!terminating) throw std::invalid_argument("simulate needs a time_horizon or event_cap stop");

  TrajectoryRecord rec;
  rec.model = std::make_shared<const PopulationModel>(model);
  rec.initial.assign(X0.begin(), X0.end());
  rec.events_logged = opts.log_events;

  std::vector<double> X(X0.begin(), X0.end());
  Rng rng(stream);
  TrajectoryObserver obs(cm, rec, stops, opts);
  if (first_level) obs.set_first_level(*first_level);

  EngineResult res;
  if (obs.check_stops(0.0, X.data())) {
    res.reason = TerminalReason::kStopHit;
    res.t = 0.0;
  } else {
    res = run_events(cm, X, 0.0, horizon, cap, rng, obs);
  }
  if (res.reason == TerminalReason::kAbsorbed) {
    if (cm.truncation_enabled() && !rec.truncation_time && cm.truncated(X.data())) rec.truncation_time = res.t;
    obs.fill_remaining(horizon, X.data());
  } else if (res.reason == TerminalReason::kHorizon) {
    obs.fill_remaining(horizon, X.data());
  } else {
    obs.fill_remaining(res.t, X.data());
  }
  rec.reason = res.reason;
  rec.end_time = res.t;
  rec.event_count = res.events;
  rec.final_state.resize(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) rec.final_state[i] = static_cast<std::int64_t>(X[i]);
  return rec;
}

}  // namespace

TrajectoryRecord simulate(const PopulationModel& model, std::span<const std::int64_t> X0,
                          const std::vector<StopSpec>& stops, RngStream rng, const SimOptions& opts) {
  return run_simulation(model, std::numeric_limits<double>::infinity(), X0, stops, rng, opts);
}

TrajectoryRecord simulate_truncated(const PopulationModel& model, double theta, std::span<const std::int64_t> X0,
                                    const std::vector<StopSpec>& stops, RngStream rng, const SimOptions& opts) {
  if (!(theta > 0.0) && theta != 0.0) throw std::invalid_argument("theta must be non-negative");
  return run_simulation(model, theta, X0, stops, rng, opts);
}

std::vector<std::int64_t> state_at(const TrajectoryRecord& traj, double t) {
  if (!traj.events_logged) {
    if (t >= traj.end_time && traj.reason != TerminalReason::kStopHit &&
        traj.reason != TerminalReason::kEventCap) {
      return traj.final_state;
    }
    if (t == traj.end_time) return traj.final_state;
    throw std::invalid_argument("state_at needs a trajectory with a logged event list");
  }
  if (t > traj.end_time && (traj.reason == TerminalReason::kStopHit || traj.reason == TerminalReason::kEventCap)) {
    throw std::invalid_argument("state_at: time beyond the end of the trajectory");
  }
  std::vector<std::int64_t> X = traj.initial;
  const auto& m = *traj.model;
  for (const auto& e : traj.events) {
    if (e.t > t) break;
    const auto& J = m.jumps[e.jump].delta;
    for (std::size_t i = 0; i < X.size(); ++i) X[i] += J[i];
  }
  return X;
}

std::vector<Vec> martingale_path(const TrajectoryRecord& traj, std::span<const double> grid) {
  if (!traj.events_logged) throw std::invalid_argument("martingale_path needs a logged event list");
  const auto& m = *traj.model;
  const CompiledModel cm(m);
  const std::size_t d = m.d;
  const double N = static_cast<double>(m.N);
  for (double g : grid) {
    if (g < 0.0 || g > traj.end_time) throw std::invalid_argument("martingale_path: grid outside trajectory span");
  }
  if (!std::is_sorted(grid.begin(), grid.end())) throw std::invalid_argument("martingale_path: grid must be ascending");

  std::vector<double> X(traj.initial.begin(), traj.initial.end());
  std::vector<double> rates(cm.num_jumps());
  Vec integral = Vec::Zero(static_cast<Eigen::Index>(d));
  Vec x_init(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) x_init[static_cast<Eigen::Index>(i)] = X[i] / N;

  auto drift_at = [&](Vec& f) {
    cm.rates(X.data(), rates.data());
    f.setZero();
    for (std::size_t j = 0; j < cm.num_jumps(); ++j) {
      const int* dj = cm.delta(j);
      for (std::size_t i = 0; i < d; ++i) f[static_cast<Eigen::Index>(i)] += dj[i] * rates[j] / N;
    }
  };

  std::vector<Vec> out;
  out.reserve(grid.size());
  Vec f(static_cast<Eigen::Index>(d));
  double t = 0.0;
  std::size_t ev = 0;
  auto emit = [&](double g) {
    Vec x(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) x[static_cast<Eigen::Index>(i)] = X[i] / N;
    out.push_back(x - x_init - integral);
    (void)g;
  };
  for (double g : grid) {
    while (ev < traj.events.size() && traj.events[ev].t <= g) {
      drift_at(f);
      integral += f * (traj.events[ev].t - t);
      t = traj.events[ev].t;
      const int* dj = cm.delta(traj.events[ev].jump);
      for (std::size_t i = 0; i < d; ++i) X[i] += dj[i];
      ++ev;
    }
    drift_at(f);
    integral += f * (g - t);
    t = g;
    emit(g);
  }
  return out;
}

std::optional<double> first_crossing(const TrajectoryRecord& traj, std::span<const double> v, double level) {
  const auto& m = *traj.model;
  if (v.size() != m.d2()) throw std::invalid_argument("first_crossing: weight vector must have length d2");
  std::vector<std::int64_t> X = traj.initial;
  auto weighted = [&] {
    double w = 0.0;
    for (std::size_t i = m.d1; i < m.d; ++i) w += v[i - m.d1] * static_cast<double>(X[i]);
    return w;
  };
  if (weighted() >= level) return 0.0;
  if (!traj.events_logged) throw std::invalid_argument("first_crossing needs a logged event list");
  for (const auto& e : traj.events) {
    const auto& J = m.jumps[e.jump].delta;
    for (std::size_t i = 0; i < X.size(); ++i) X[i] += J[i];
    if (weighted() >= level) return e.t;
  }
  return std::nullopt;
}

}  // namespace mpp
