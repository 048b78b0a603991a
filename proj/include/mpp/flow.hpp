#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpp/model.hpp"
#include "mpp/spectral.hpp"

namespace mpp {

class FlowError : public std::runtime_error {
 public:
  FlowError(const std::string& what, Vec state, double t) : std::runtime_error(what), state_(std::move(state)), t_(t) {}
  const Vec& state() const { return state_; }
  double time() const { return t_; }

 private:
  Vec state_;
  double t_;
};

using VectorField = std::function<void(const Vec& x, Vec& dx)>;

/// Dormand-Prince 5(4) solution with its continuous extension on every step.
class FlowTrajectory {
 public:
  std::vector<double> times;  // step boundaries, times.front() == 0
  std::vector<Vec> states;    // states at step boundaries
  std::size_t accepted = 0;
  std::size_t rejected = 0;

  double end_time() const { return times.back(); }
  const Vec& final_state() const { return states.back(); }
  /// Dense output at t in [0, end_time()].
  Vec at(double t) const;

  // Per-step interpolation coefficients (5 vectors per step).
  std::vector<std::array<Vec, 5>> dense;
};

struct IntegratorOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h0 = 0.0;  // 0 selects an initial step automatically
};

/// Adaptive integration of dx/dt = f(x) on [0, T].
FlowTrajectory integrate_field(const VectorField& f, const Vec& xi0, double T, const IntegratorOptions& opts);

/// dxi/dt = F(xi) on [0, T]; tol in [1e-12, 1e-6] is the target accuracy
/// (local control runs at tol/10, relative and absolute).
FlowTrajectory integrate(const PopulationModel& model, const Vec& xi0, double T, double tol = 1e-10);

/// Classical fixed-step Dormand-Prince (5th order) endpoint, for order checks.
Vec integrate_fixed(const VectorField& f, const Vec& xi0, double T, std::size_t steps);

VectorField drift_field(const PopulationModel& model);

struct Timescales {
  std::optional<double> t0;          // log(delta/eps) / beta0
  std::optional<double> t1;          // log(delta/eps) / beta1
  std::optional<double> t_xi_alpha;  // ((1-alpha) log N - log(v.Z0)) / beta0
  std::optional<double> t_N_delta;   // max(0, (log delta + 5/12 log N) / beta1)
  std::optional<double> t_hat;       // (log N + log(delta e^{-beta1 t_N_delta})) / beta1
};

struct TimescaleInput {
  std::optional<double> beta0;
  Vec v;  // weights for v.Z0 (required with beta0)
  std::optional<double> beta1;
  double N = 0.0;
  double alpha = 5.0 / 12.0;
  double delta = 0.1;
  double eps = 0.1;
  Vec Z0;
};

/// Evaluates the timescales for which the needed rates are supplied.
Timescales timescales(const TimescaleInput& in);

struct VocResidual {
  double t = 0.0;
  double first_block = 0.0;   // |residual| of the xi^(1) identity
  double second_block = 0.0;  // |residual| of the xi^(2) identity
  double max() const { return std::max(first_block, second_block); }
};

/// Variation-of-constants residuals on `grid` (ascending, within [0, end]).
/// xi is any path, typically a FlowTrajectory's dense output; quadrature step
/// is min(1e-3, end/1e4) unless `step` is given.
std::vector<VocResidual> voc_residual(const PopulationModel& model, const std::function<Vec(double)>& xi,
                                      std::span<const double> grid, std::optional<double> step = std::nullopt);
std::vector<VocResidual> voc_residual(const PopulationModel& model, const FlowTrajectory& traj,
                                      std::span<const double> grid, std::optional<double> step = std::nullopt);

struct EnvelopePoint {
  double eps = 0.0;
  double ratio = 0.0;
};

struct EnvelopeFit {
  std::string bound_id;
  double delta = 0.0;
  std::vector<EnvelopePoint> points;  // observed sup ratio per eps
  double fitted_constant = 0.0;       // max ratio over the grid
  double max_observed_ratio = 0.0;    // max/min ratio across the grid
  bool pass = false;
};

/// Unstable regime (beta0 > 0): starts with |xi1 - x01| = |xi2| = eps, windows
/// [0, t0(delta, eps)]. Stable regime (beta0 < 0): eps values are start radii,
/// ratios taken over a decay window with kappa' = 0.9 min(kappa, beta1).
std::vector<EnvelopeFit> lemma_envelopes(const PopulationModel& model, std::span<const double> eps_grid, double delta);

struct EscapePoint {
  Vec state;
  double time = 0.0;     // t_xi + t0(delta', eps_N)
  double t_xi = 0.0;
  double eps_N = 0.0;
  double min_component = 0.0;
  bool positive = false;  // min component >= 1e-8
};

/// Deterministic flow from (x0^(1), Z0/N) evaluated at t_xi + t0(delta', eps_N),
/// eps_N = N^{-alpha} |u|; delta' = 0 means the point at t_xi.
EscapePoint escape_point(const PopulationModel& model, double N, double delta_prime, const Vec& Z0,
                         double alpha = 5.0 / 12.0);

}  // namespace mpp
