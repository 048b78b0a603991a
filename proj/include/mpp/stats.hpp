#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace mpp {

/// Raised when a fit cannot be carried out (too few or degenerate samples,
/// root solve not converged).
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProportionCI {
  double p = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t successes = 0;
  std::size_t n = 0;
};

/// Wilson score interval; z = 1.96 gives 95%.
ProportionCI wilson(std::size_t successes, std::size_t n, double z = 1.96);

struct MeanSE {
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

MeanSE mean_se(std::span<const double> x);
/// Unbiased sample variance.
double sample_variance(std::span<const double> x);
/// Linear interpolation between order statistics (type 7).
double quantile(std::vector<double> x, double q);

struct KSResult {
  double statistic = 0.0;
  std::size_t n = 0;
};

KSResult ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf);

double gumbel_cdf(double x, double loc = 0.0, double scale = 1.0);
double gamma_cdf(double x, double shape, double scale);

struct GumbelFit {
  double location = 0.0;
  double scale = 1.0;
  double ks_stat = 0.0;
  std::size_t n = 0;
};

struct GammaFit {
  double shape = 1.0;
  double scale = 1.0;
  double ks_stat = 0.0;
  std::size_t n = 0;
};

inline constexpr std::size_t kMinFitSamples = 200;

/// Maximum likelihood for the max-Gumbel law exp(-exp(-(x-loc)/scale)).
GumbelFit fit_gumbel(std::span<const double> samples);
/// Maximum likelihood for Gamma(shape, scale); samples must be positive.
GammaFit fit_gamma(std::span<const double> samples);

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

Regression linear_regression(std::span<const double> x, std::span<const double> y);

struct IntervalEstimate {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap interval for the median.
IntervalEstimate bootstrap_median_ci(std::span<const double> samples, std::size_t resamples, std::uint64_t seed,
                                     double level = 0.95);

/// Upper tail P(chi2_dof > stat).
double chi_square_sf(double stat, double dof);

}  // namespace mpp
