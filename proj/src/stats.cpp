#include "mpp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include "mpp/rng.hpp"

namespace mpp {

ProportionCI wilson(std::size_t successes, std::size_t n, double z) {
  ProportionCI ci;
  ci.successes = successes;
  ci.n = n;
  if (n == 0) return ci;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  ci.p = p;
  ci.se = std::sqrt(p * (1.0 - p) / nn);
  ci.lo = std::max(0.0, centre - half);
  ci.hi = std::min(1.0, centre + half);
  return ci;
}

MeanSE mean_se(std::span<const double> x) {
  MeanSE r;
  r.n = x.size();
  if (x.empty()) return r;
  r.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  if (x.size() > 1) {
    r.sd = std::sqrt(sample_variance(x));
    r.se = r.sd / std::sqrt(static_cast<double>(x.size()));
  }
  return r;
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

KSResult ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic needs at least one sample");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = cdf(s[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return {std::clamp(d, 0.0, 1.0), s.size()};
}

double gumbel_cdf(double x, double loc, double scale) { return std::exp(-std::exp(-(x - loc) / scale)); }

double gamma_cdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(shape, x / scale);
}

namespace {

template <class F>
double solve_bracketed(F f, double lo, double hi, const char* what) {
  boost::uintmax_t iters = 200;
  const auto tol = boost::math::tools::eps_tolerance<double>(50);
  const auto r = boost::math::tools::toms748_solve(f, lo, hi, tol, iters);
  if (iters >= 200) throw FitError(std::string(what) + ": root solve did not converge in 200 iterations");
  return 0.5 * (r.first + r.second);
}

}  // namespace

GumbelFit fit_gumbel(std::span<const double> samples) {
  if (samples.size() < kMinFitSamples) throw FitError("fit_gumbel needs at least 200 samples");
  const auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
  const double mn = *mn_it;
  const double mx = *mx_it;
  if (!(mx > mn)) throw FitError("fit_gumbel: degenerate sample (scale -> 0)");
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  // Profile equation: scale = mean - sum(x w) / sum(w), w = exp(-(x - min)/scale).
  auto weighted = [&](double b) {
    double sw = 0.0;
    double sxw = 0.0;
    for (double x : samples) {
      const double w = std::exp(-(x - mn) / b);
      sw += w;
      sxw += x * w;
    }
    return std::pair{sw, sxw};
  };
  auto h = [&](double b) {
    const auto [sw, sxw] = weighted(b);
    return b - mean + sxw / sw;
  };
  const double spread = mx - mn;
  double lo = spread * 1e-6;
  double hi = spread;
  if (h(lo) >= 0.0) throw FitError("fit_gumbel: degenerate sample (scale -> 0)");
  while (h(hi) <= 0.0) {
    hi *= 2.0;
    if (hi > 1e12 * spread) throw FitError("fit_gumbel: could not bracket the scale");
  }
  GumbelFit fit;
  fit.scale = solve_bracketed(h, lo, hi, "fit_gumbel");
  const auto [sw, sxw] = weighted(fit.scale);
  (void)sxw;
  fit.location = mn - fit.scale * std::log(sw / static_cast<double>(samples.size()));
  fit.n = samples.size();
  fit.ks_stat = ks_statistic(samples, [&](double x) { return gumbel_cdf(x, fit.location, fit.scale); }).statistic;
  return fit;
}

GammaFit fit_gamma(std::span<const double> samples) {
  if (samples.size() < kMinFitSamples) throw FitError("fit_gamma needs at least 200 samples");
  double sum = 0.0;
  double sum_log = 0.0;
  for (double x : samples) {
    if (!(x > 0.0)) throw FitError("fit_gamma: samples must be strictly positive");
    sum += x;
    sum_log += std::log(x);
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sum / n;
  const double s = std::log(mean) - sum_log / n;
  if (!(s > 1e-14)) throw FitError("fit_gamma: degenerate sample (shape -> infinity)");
  // log k - digamma(k) decreases from +inf to 0.
  auto h = [&](double k) { return std::log(k) - boost::math::digamma(k) - s; };
  double lo = 1e-8;
  double hi = 1.0;
  while (h(hi) > 0.0) {
    hi *= 2.0;
    if (hi > 1e12) throw FitError("fit_gamma: could not bracket the shape");
  }
  while (h(lo) < 0.0) lo *= 0.5;
  GammaFit fit;
  fit.shape = solve_bracketed(h, lo, hi, "fit_gamma");
  fit.scale = mean / fit.shape;
  fit.n = samples.size();
  fit.ks_stat = ks_statistic(samples, [&](double x) { return gamma_cdf(x, fit.shape, fit.scale); }).statistic;
  return fit;
}

Regression linear_regression(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_regression needs >= 2 paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("linear_regression: x values are all equal");
  Regression r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  if (x.size() > 2) {
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = y[i] - r.intercept - r.slope * x[i];
      ss += e * e;
    }
    r.slope_se = std::sqrt(ss / (n - 2.0) / sxx);
  }
  return r;
}

IntervalEstimate bootstrap_median_ci(std::span<const double> samples, std::size_t resamples, std::uint64_t seed,
                                     double level) {
  if (samples.empty()) throw std::invalid_argument("bootstrap_median_ci of empty sample");
  std::vector<double> data(samples.begin(), samples.end());
  IntervalEstimate out;
  out.estimate = quantile(data, 0.5);
  Rng rng({seed, 0});
  std::vector<double> meds;
  meds.reserve(resamples);
  std::vector<double> buf(data.size());
  const auto n = static_cast<std::uint64_t>(data.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    for (auto& v : buf) v = data[rng() % n];
    const auto mid = buf.begin() + static_cast<long>(buf.size() / 2);
    std::nth_element(buf.begin(), mid, buf.end());
    double med = *mid;
    if (buf.size() % 2 == 0) med = 0.5 * (med + *std::max_element(buf.begin(), mid));
    meds.push_back(med);
  }
  out.lo = quantile(meds, (1.0 - level) / 2.0);
  out.hi = quantile(meds, 1.0 - (1.0 - level) / 2.0);
  return out;
}

double chi_square_sf(double stat, double dof) {
  if (stat <= 0.0) return 1.0;
  return boost::math::gamma_q(dof / 2.0, stat / 2.0);
}

}  // namespace mpp
