#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpp/branching.hpp"
#include "mpp/model.hpp"
#include "mpp/rng.hpp"
#include "mpp/stats.hpp"

namespace mpp {

inline constexpr double kDefaultAlpha = 5.0 / 12.0;

struct ReplicaSummary {
  RngStream seed;
  bool survived = false;
  std::optional<double> tau_star;
  /// tau - t_xi.
  std::optional<double> delay;
  /// v.X2(tau) e^{-beta0 tau}.
  std::optional<double> W_est;
  std::optional<double> sup_path_error;
  std::optional<double> extinction_time;
};

struct EscapeDelayResult {
  std::int64_t N = 0;
  std::vector<std::int64_t> Z0;
  double alpha = kDefaultAlpha;
  std::uint64_t seed = 0;
  double beta0 = 0.0;
  double level = 0.0;
  /// Linearised t_xi = ((1-alpha) log N - log v.Z0) / beta0.
  double t_xi = 0.0;
  /// First time v.xi2 reaches level / N on the integrated flow.
  std::optional<double> t_xi_flow;
  std::vector<ReplicaSummary> replicas;
  /// beta0 * delay over surviving replicas.
  std::vector<double> scaled_delays;
  ProportionCI survival;
  /// Absent when fewer than kMinFitSamples replicas survive.
  std::optional<GumbelFit> fit;
  MeanSE tau;
  MeanSE scaled_delay;
};

/// Runs from (round(N x0^(1)), Z0) to the level N^{1-alpha} + v.Z0 or to
/// extinction of the second block. Requires beta0 > 0.
EscapeDelayResult escape_delay_experiment(const PopulationModel& model, std::int64_t N,
                                          std::span<const std::int64_t> Z0, std::size_t replicas, std::uint64_t seed,
                                          double alpha = kDefaultAlpha, unsigned threads = 0);

struct ExtinctionResult {
  std::int64_t n0 = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double mu = 0.0;
  double beta1 = 0.0;
  double h_star = 0.0;
  std::vector<double> times;
  /// beta1 T - log n0 - log h*.
  std::vector<double> centered;
  /// KS of `centered` against the standard Gumbel law.
  KSResult ks_standard;
  /// KS of `times` against the exact law p0(t)^n0.
  KSResult ks_exact;
  std::optional<GumbelFit> fit;
};

/// Exact P(T <= t) for the extinction time of n0 independent birth-death lines.
double bd_extinction_cdf(double t, double lambda, double mu, std::int64_t n0);

/// Extinction time of a subcritical single-type birth-death branching process
/// started from n0 individuals.
ExtinctionResult extinction_experiment(const BranchingSpec& spec, std::int64_t n0, std::size_t replicas,
                                       std::uint64_t seed, unsigned threads = 0);
/// Same, for the branching approximation of an extinction-phase model.
ExtinctionResult extinction_experiment(const PopulationModel& model, std::int64_t n0, std::size_t replicas,
                                       std::uint64_t seed, unsigned threads = 0);

struct ThreePhaseResult {
  std::int64_t N = 0;
  RngStream seed;
  bool survived = false;
  /// Mutant extinction time when the run dies out in the first phase.
  std::optional<double> phase1_extinction;
  std::optional<double> tau_star;
  /// First entry into the delta-ball around (0, a2).
  std::optional<double> ball_entry;
  /// Wild-type extinction.
  std::optional<double> absorption;
  std::optional<double> total;
  /// (1/(a2 - gamma a1) + 1/(gamma a2 - a1)) log N.
  double T_N = 0.0;
};

/// One trajectory of the invasion model from (N a1, 1) to wild-type extinction.
ThreePhaseResult three_phase_run(double a1, double a2, double gamma, std::int64_t N, RngStream rng,
                                 double delta = 0.1);

struct ClosenessRow {
  std::int64_t N = 0;
  std::size_t survivors = 0;
  std::vector<double> sup_errors;
  double median = 0.0;
  double q90 = 0.0;
  IntervalEstimate median_ci;
};

struct ClosenessResult {
  std::vector<ClosenessRow> rows;
  /// Slope of log median against log N.
  Regression slope;
  double T = 1.0;
  std::size_t grid_points = 200;
};

/// Per N, sup over t in [0, (5/12) beta0^{-1} log N + T] of |x(tau + t) - xi(t_xi + t)|
/// on an even grid, over surviving replicas.
ClosenessResult path_closeness_experiment(const PopulationModel& model, std::span<const std::int64_t> N_list,
                                          std::span<const std::int64_t> Z0, std::size_t replicas, std::uint64_t seed,
                                          double T = 1.0, std::size_t grid_points = 200, unsigned threads = 0);

struct WShapeResult {
  std::vector<std::int64_t> Z0;
  double T = 0.0;
  std::uint64_t seed = 0;
  /// v.Z(T) e^{-beta0 T} per replica.
  std::vector<double> W;
  std::vector<double> positive;
  ProportionCI extinct;
  std::optional<GammaFit> fit;
  /// Reference scales for the fitted Gamma law: 1 and, for birth-death specs,
  /// lambda / (lambda - mu).
  std::vector<double> candidate_scales;
};

WShapeResult w_shape_experiment(const BranchingSpec& spec, std::span<const std::int64_t> Z0, double T,
                                std::size_t replicas, std::uint64_t seed, unsigned threads = 0);

// Outputs: per-replica CSV rows and a JSON summary.
std::string escape_csv(const EscapeDelayResult& r);
nlohmann::json escape_json(const EscapeDelayResult& r);
std::string extinction_csv(const ExtinctionResult& r);
nlohmann::json extinction_json(const ExtinctionResult& r);
std::string three_phase_csv(std::span<const ThreePhaseResult> runs);
nlohmann::json three_phase_json(std::span<const ThreePhaseResult> runs);
std::string closeness_csv(const ClosenessResult& r);
nlohmann::json closeness_json(const ClosenessResult& r);
std::string w_shape_csv(const WShapeResult& r);
nlohmann::json w_shape_json(const WShapeResult& r);

}  // namespace mpp
