#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpp/model.hpp"
#include "mpp/rng.hpp"
#include "mpp/simulate.hpp"
#include "mpp/stats.hpp"

namespace mpp {

/// kStepwise couples each second-block jump at rate max(q_N^J, q^J) and lets
/// both copies jump with probability min/max. kMaximal draws the branching
/// path and keeps it for the population process with probability min(1, R),
/// R being the path likelihood ratio, which is a maximal coupling of the two
/// stopped path laws.
enum class CouplingMethod { kStepwise, kMaximal };

enum class DivergenceCause { kRateMismatchJump, kExtraJumpX, kExtraJumpZ };

const char* to_string(CouplingMethod m);
const char* to_string(DivergenceCause c);

struct CoupleOptions {
  CouplingMethod method = CouplingMethod::kMaximal;
  /// kMaximal: after a rejection, sample the population path from the residual
  /// law to locate the divergence time.
  bool residual_draw = true;
  std::size_t max_proposals = 10000;
  std::uint64_t event_cap = kDefaultEventCap;
};

struct CoupledRun {
  bool diverged = false;
  /// Absent when the paths never separate, or when a kMaximal rejection was not
  /// resolved by a residual draw.
  std::optional<double> divergence_time;
  std::optional<DivergenceCause> divergence_cause;
  /// Joint crossing time of v.z >= N^{1-alpha} + v.Z0 while the paths agree.
  std::optional<double> tau_star;
  bool z_extinct_first = false;
  std::uint64_t event_count = 0;
  double end_time = 0.0;
  /// Branching-process counts at the end of the run.
  std::vector<std::int64_t> z_final;
  /// kMaximal: log R on the branching path.
  std::optional<double> log_ratio;
  std::size_t proposals = 0;
};

/// Joint run of the population process started at (N x0^(1), Z0) and the
/// branching approximation started at Z0. Requires beta0 > 0.
CoupledRun couple_run(const PopulationModel& model, std::span<const std::int64_t> Z0, double alpha, double horizon,
                      RngStream rng, const CoupleOptions& opts = {});

struct LRSample {
  double value = 1.0;
  std::size_t m = 0;
  double log_terms = 0.0;
  /// sum_i N^{-1}(i^2 T_i - i), asymptotically N(0, a^3/3) for m = a N^{2/3}.
  double exponent = 0.0;
};

/// Likelihood ratio of the first m jumps of the stochastic logistic model
/// against the Yule process, with T_i ~ Exp(i) drawn from `rng` unless
/// `waiting_times` (length m) is given.
LRSample logistic_lr(std::int64_t N, std::size_t m, Rng& rng, std::span<const double> waiting_times = {});

enum class TVMethod { kCouplingBound, kLrFormula };
const char* to_string(TVMethod m);

struct TVEstimate {
  double value = 0.0;
  double std_error = 0.0;
  TVMethod method = TVMethod::kLrFormula;
};

/// Mean of max(0, 1 - R) with its standard error; needs at least 100 samples.
TVEstimate tv_lower_from_lr(std::span<const LRSample> samples);
/// Divergence fraction of a coupling as an upper bound on total variation.
TVEstimate tv_from_coupling(std::size_t diverged, std::size_t n);

struct DivergenceRow {
  std::int64_t N = 0;
  ProportionCI fraction;
};

/// Per N, the fraction of coupled runs that separate before min(tau, extinction).
std::vector<DivergenceRow> divergence_curve(const PopulationModel& model, std::span<const std::int64_t> Z0,
                                            std::span<const std::int64_t> N_list, double alpha, std::size_t replicas,
                                            std::uint64_t seed, const CoupleOptions& opts = {}, unsigned threads = 0);

std::string divergence_csv(std::span<const DivergenceRow> rows);

struct GapResult {
  double eta = 0.0;
  std::int64_t N = 0;
  std::size_t replicas = 0;
  /// N^{2 eta} (x1 - x2) at tau + (5/12) log N, surviving replicas only.
  std::vector<double> rescaled;
  /// x1 - x2 at the same time.
  std::vector<double> raw;
};

/// Two-type mixing model from (1, 1) run to tau_{N*} + (5/12) log N.
GapResult symmetric_gap_experiment(double eta, std::int64_t N, std::size_t replicas, std::uint64_t seed,
                                   unsigned threads = 0);

}  // namespace mpp
