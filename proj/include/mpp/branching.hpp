#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mpp/model.hpp"
#include "mpp/simulate.hpp"
#include "mpp/spectral.hpp"
#include "mpp/stats.hpp"

namespace mpp {

/// Type s individual produces net change J2 at per-capita rate per_capita_rate.
struct BranchingEvent {
  std::vector<int> J2;
  std::size_t s = 0;
  double per_capita_rate = 0.0;
};

/// Multitype Markov branching process. mean_matrix has row i = mean net
/// offspring rate of a type-i individual, so dE Z/dt = mean_matrix^T E Z and
/// spectral.B0 = mean_matrix^T.
struct BranchingSpec {
  std::size_t d2 = 0;
  std::vector<BranchingEvent> events;
  Mat mean_matrix;
  SpectralData spectral;
};

/// Builds a BranchingSpec and its spectral data; throws on invalid events.
BranchingSpec make_branching_spec(std::size_t d2, std::vector<BranchingEvent> events);
/// Second-block jumps with per-capita rates gbar^J(x0).
BranchingSpec branching_from_model(const PopulationModel& model);
BranchingSpec birth_death_spec(double lambda, double mu);

/// The branching process as a population model with d1 = 0 and N = 1 (linear rates).
PopulationModel branching_as_model(const BranchingSpec& spec);

TrajectoryRecord simulate_z(const BranchingSpec& spec, std::span<const std::int64_t> Z0, double horizon,
                            std::uint64_t cap, RngStream rng, const SimOptions& opts = {},
                            std::vector<StopSpec> extra_stops = {});

struct WEstimate {
  double value = 0.0;
  double T = 0.0;
  bool extinct = false;
};

/// v . Z(T) e^{-beta0 T}.
WEstimate estimate_W(const TrajectoryRecord& traj, const SpectralData& spectral, double T);

/// Non-extinction proxy: v.Z reaches 1e3 * v.Z0 before hitting zero.
ProportionCI survival_probability(const BranchingSpec& spec, std::span<const std::int64_t> Z0, std::size_t replicas,
                                  std::uint64_t seed, unsigned threads = 0);

struct AppendixBParams {
  double a = 1.0;
  double K = 1.0;
  /// Defaults to delta*beta0 / (2(beta0 + 2 delta)) with delta = 0.9 * gap.
  std::optional<double> chi;
  /// Defaults to log(1e4) / beta0.
  std::optional<double> T_max;
};

struct AppendixBRow {
  double t = 0.0;
  double e1_fail_rate = 0.0;
  double e2_fail_rate = 0.0;
  /// max_i |mean(N_i(t) - N_i(0))| / SE_i.
  double mart_mean_dev = 0.0;
  Vec mart_mean;
  Vec mart_se;
};

struct AppendixBResult {
  std::vector<AppendixBRow> rows;
  double chi = 0.0;
  double T_max = 0.0;
  /// Secondary martingale (Z_1 - Z_2) e^{-beta' t} for two-type specs, beta'
  /// being the other eigenvalue; empty otherwise.
  std::vector<MeanSE> secondary;
};

AppendixBResult appendixB_diagnostics(const BranchingSpec& spec, std::span<const std::int64_t> Z0,
                                      std::span<const double> t_grid, std::size_t replicas, std::uint64_t seed,
                                      const AppendixBParams& params = {}, unsigned threads = 0);

}  // namespace mpp
