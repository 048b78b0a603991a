#include "mpp/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace mpp {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                 e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

struct Stages {
  explicit Stages(Eigen::Index n)
      : k1(Vec::Zero(n)), k2(Vec::Zero(n)), k3(Vec::Zero(n)), k4(Vec::Zero(n)), k5(Vec::Zero(n)), k6(Vec::Zero(n)),
        k7(Vec::Zero(n)), y1(Vec::Zero(n)) {}
  Vec k1, k2, k3, k4, k5, k6, k7;
  Vec y1;
};

void dp_step(const VectorField& f, const Vec& y, double h, Stages& s) {
  Vec tmp;
  tmp = y + h * (a21 * s.k1);
  f(tmp, s.k2);
  tmp = y + h * (a31 * s.k1 + a32 * s.k2);
  f(tmp, s.k3);
  tmp = y + h * (a41 * s.k1 + a42 * s.k2 + a43 * s.k3);
  f(tmp, s.k4);
  tmp = y + h * (a51 * s.k1 + a52 * s.k2 + a53 * s.k3 + a54 * s.k4);
  f(tmp, s.k5);
  tmp = y + h * (a61 * s.k1 + a62 * s.k2 + a63 * s.k3 + a64 * s.k4 + a65 * s.k5);
  f(tmp, s.k6);
  s.y1 = y + h * (a71 * s.k1 + a73 * s.k3 + a74 * s.k4 + a75 * s.k5 + a76 * s.k6);
  f(s.y1, s.k7);
}

double rms_norm(const Vec& e, const Vec& y0, const Vec& y1, double rtol, double atol) {
  if (e.size() == 0) return 0.0;
  const Vec sc = (atol + rtol * y0.cwiseAbs().cwiseMax(y1.cwiseAbs()).array()).matrix();
  return std::sqrt((e.cwiseQuotient(sc)).squaredNorm() / static_cast<double>(e.size()));
}

}  // namespace

Vec FlowTrajectory::at(double t) const {
  if (times.empty()) throw std::invalid_argument("FlowTrajectory::at on empty trajectory");
  if (t <= times.front()) return states.front();
  if (t >= times.back()) return states.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const auto k = static_cast<std::size_t>(it - times.begin()) - 1;
  const double h = times[k + 1] - times[k];
  const double th = (t - times[k]) / h;
  const double th1 = 1.0 - th;
  const auto& r = dense[k];
  return r[0] + th * (r[1] + th1 * (r[2] + th * (r[3] + th1 * r[4])));
}

FlowTrajectory integrate_field(const VectorField& f, const Vec& xi0, double T, const IntegratorOptions& opts) {
  if (!(T >= 0.0) || !std::isfinite(T)) throw std::invalid_argument("integrate: horizon must be finite and >= 0");
  FlowTrajectory out;
  out.times.push_back(0.0);
  out.states.push_back(xi0);
  if (T == 0.0 || xi0.size() == 0) {
    if (T > 0.0) {
      out.times.push_back(T);
      out.states.push_back(xi0);
      out.dense.push_back({xi0, Vec::Zero(xi0.size()), Vec::Zero(xi0.size()), Vec::Zero(xi0.size()),
                           Vec::Zero(xi0.size())});
    }
    return out;
  }
  const double rtol = opts.rtol;
  const double atol = opts.atol;
  Stages s(xi0.size());
  Vec y = xi0;
  f(y, s.k1);

  double h = opts.h0;
  if (h <= 0.0) {
    const Vec sc = (atol + rtol * y.cwiseAbs().array()).matrix();
    const double n0 = std::sqrt(y.cwiseQuotient(sc).squaredNorm() / static_cast<double>(y.size()));
    const double n1 = std::sqrt(s.k1.cwiseQuotient(sc).squaredNorm() / static_cast<double>(y.size()));
    h = (n0 < 1e-5 || n1 < 1e-5) ? 1e-6 : 0.01 * n0 / n1;
    h = std::min(h, T);
  }
  double t = 0.0;
  std::size_t steps = 0;
  while (t < T) {
    if (++steps > 10'000'000) throw FlowError("integrate: step limit exceeded", y, t);
    bool last = false;
    if (t + h >= T) {
      h = T - t;
      last = true;
    }
    if (h < 1e-14 * std::max(1.0, std::abs(t))) throw FlowError("integrate: step size underflow", y, t);
    dp_step(f, y, h, s);
    const Vec err = h * (e1 * s.k1 + e3 * s.k3 + e4 * s.k4 + e5 * s.k5 + e6 * s.k6 + e7 * s.k7);
    const double en = rms_norm(err, y, s.y1, rtol, atol);
    if (!std::isfinite(en)) {
      ++out.rejected;
      h *= 0.2;
      continue;
    }
    if (en <= 1.0) {
      const Vec ydiff = s.y1 - y;
      const Vec bspl = h * s.k1 - ydiff;
      std::array<Vec, 5> r{y, ydiff, bspl, ydiff - h * s.k7 - bspl,
                           h * (d1 * s.k1 + d3 * s.k3 + d4 * s.k4 + d5 * s.k5 + d6 * s.k6 + d7 * s.k7)};
      out.dense.push_back(std::move(r));
      t = last ? T : t + h;
      y = s.y1;
      s.k1 = s.k7;
      out.times.push_back(t);
      out.states.push_back(y);
      ++out.accepted;
      const double fac = en == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 10.0);
      h *= fac;
    } else {
      ++out.rejected;
      h *= std::clamp(0.9 * std::pow(en, -0.2), 0.2, 1.0);
    }
  }
  return out;
}

VectorField drift_field(const PopulationModel& model) {
  return [&model](const Vec& x, Vec& dx) { dx = drift(model, std::span<const double>(x.data(), static_cast<std::size_t>(x.size()))); };
}

FlowTrajectory integrate(const PopulationModel& model, const Vec& xi0, double T, double tol) {
  if (!(tol >= 1e-12 && tol <= 1e-6)) throw std::invalid_argument("integrate: tol must lie in [1e-12, 1e-6]");
  if (static_cast<std::size_t>(xi0.size()) != model.d) throw std::invalid_argument("integrate: xi0 has wrong length");
  IntegratorOptions opts;
  // Local error control at tol/10 keeps the global error within tol.
  opts.rtol = 0.1 * tol;
  opts.atol = 0.1 * tol;
  return integrate_field(drift_field(model), xi0, T, opts);
}

Vec integrate_fixed(const VectorField& f, const Vec& xi0, double T, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("integrate_fixed needs at least one step");
  const double h = T / static_cast<double>(steps);
  Stages s(xi0.size());
  Vec y = xi0;
  f(y, s.k1);
  for (std::size_t i = 0; i < steps; ++i) {
    dp_step(f, y, h, s);
    y = s.y1;
    s.k1 = s.k7;
  }
  return y;
}

Timescales timescales(const TimescaleInput& in) {
  if (!(in.N >= 2.0)) throw std::invalid_argument("timescales: N must be >= 2");
  if (!(in.eps > 0.0) || !(in.eps <= in.delta)) throw std::invalid_argument("timescales: need 0 < eps <= delta");
  Timescales ts;
  const double ratio = std::log(in.delta / in.eps);
  if (in.beta0) {
    if (!(*in.beta0 > 0.0)) throw std::invalid_argument("timescales: beta0 must be positive for t0 and t_xi");
    ts.t0 = ratio / *in.beta0;
    if (in.Z0.size() > 0) {
      if (in.v.size() != in.Z0.size()) throw std::invalid_argument("timescales: v and Z0 lengths differ");
      const double vz = in.v.dot(in.Z0);
      if (!(vz > 0.0)) throw std::invalid_argument("timescales: v.Z0 must be positive");
      ts.t_xi_alpha = ((1.0 - in.alpha) * std::log(in.N) - std::log(vz)) / *in.beta0;
    }
  }
  if (in.beta1) {
    if (!(*in.beta1 > 0.0)) throw std::invalid_argument("timescales: beta1 must be positive for t1");
    const double b1 = *in.beta1;
    ts.t1 = ratio / b1;
    ts.t_N_delta = std::max((std::log(in.delta) + 5.0 / 12.0 * std::log(in.N)) / b1, 0.0);
    const double level = std::log(in.delta) - b1 * *ts.t_N_delta;
    ts.t_hat = std::max((std::log(in.N) + level) / b1, 0.0);
  }
  return ts;
}

std::vector<VocResidual> voc_residual(const PopulationModel& model, const std::function<Vec(double)>& xi,
                                      std::span<const double> grid, std::optional<double> step) {
  if (grid.empty()) return {};
  if (!std::is_sorted(grid.begin(), grid.end()) || grid.front() < 0.0) {
    throw std::invalid_argument("voc_residual: grid must be ascending and non-negative");
  }
  const auto st = structure_at(model, model.x0);
  const auto d1 = static_cast<Eigen::Index>(model.d1);
  const auto d2 = static_cast<Eigen::Index>(model.d2());
  Vec x01(d1);
  for (Eigen::Index i = 0; i < d1; ++i) x01[i] = model.x0[static_cast<std::size_t>(i)];

  // Nonlinear remainders: F2 - B0 xi2 and F1 - C (xi1 - x01).
  auto remainders = [&](double t, Vec& f1, Vec& f2) {
    const Vec x = xi(t);
    const Vec F = drift(model, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
    f1 = F.head(d1) - st.C * (x.head(d1) - x01);
    f2 = F.tail(d2) - st.B0 * x.tail(d2);
  };

  const double span = grid.back();
  const double h = step.value_or(std::min(1e-3, span > 0.0 ? span / 1e4 : 1e-3));
  if (!(h > 0.0)) throw std::invalid_argument("voc_residual: quadrature step must be positive");

  std::map<double, std::pair<Mat, Mat>> exp_cache;
  auto propagators = [&](double dt) -> const std::pair<Mat, Mat>& {
    auto it = exp_cache.find(dt);
    if (it == exp_cache.end()) it = exp_cache.emplace(dt, std::pair{matrix_exp(st.C, dt), matrix_exp(st.B0, dt)}).first;
    return it->second;
  };

  const Vec xi_start = xi(0.0);
  const Vec y1_0 = xi_start.head(d1) - x01;
  const Vec y2_0 = xi_start.tail(d2);
  Vec I1 = Vec::Zero(d1);
  Vec I2 = Vec::Zero(d2);
  Vec f1, f2, g1, g2;
  remainders(0.0, f1, f2);
  double t = 0.0;
  std::vector<VocResidual> out;
  for (double target : grid) {
    while (t < target) {
      const double dt = std::min(h, target - t);
      const auto& [E1, E2] = propagators(dt);
      remainders(t + dt, g1, g2);
      I1 = E1 * I1 + 0.5 * dt * (E1 * f1 + g1);
      I2 = E2 * I2 + 0.5 * dt * (E2 * f2 + g2);
      f1 = g1;
      f2 = g2;
      t += dt;
      if (target - t < 1e-12 * std::max(1.0, target)) t = target;
    }
    const Vec x = xi(target);
    VocResidual r;
    r.t = target;
    if (d1 > 0) r.first_block = (x.head(d1) - x01 - matrix_exp(st.C, target) * y1_0 - I1).norm();
    if (d2 > 0) r.second_block = (x.tail(d2) - matrix_exp(st.B0, target) * y2_0 - I2).norm();
    out.push_back(r);
  }
  return out;
}

std::vector<VocResidual> voc_residual(const PopulationModel& model, const FlowTrajectory& traj,
                                      std::span<const double> grid, std::optional<double> step) {
  for (double g : grid) {
    if (g > traj.end_time() + 1e-12) throw std::invalid_argument("voc_residual: grid beyond trajectory end");
  }
  return voc_residual(model, [&](double t) { return traj.at(t); }, grid, step);
}

namespace {

EnvelopeFit summarise(std::string id, double delta, std::vector<EnvelopePoint> pts) {
  EnvelopeFit fit;
  fit.bound_id = std::move(id);
  fit.delta = delta;
  double mx = 0.0;
  double mn = std::numeric_limits<double>::infinity();
  bool finite = true;
  for (const auto& p : pts) {
    finite = finite && std::isfinite(p.ratio);
    mx = std::max(mx, p.ratio);
    mn = std::min(mn, p.ratio);
  }
  fit.fitted_constant = mx;
  if (mx <= 1e-12) {
    // Bound identically (numerically) zero: trivially stable.
    fit.max_observed_ratio = 1.0;
    fit.points = std::move(pts);
    fit.pass = finite;
    return fit;
  }
  fit.max_observed_ratio = mn > 0.0 ? mx / mn : std::numeric_limits<double>::infinity();
  // Points are ordered by decreasing eps; monotone growth of more than 2x
  // towards small eps counts as divergence.
  bool increasing = pts.size() >= 2;
  for (std::size_t i = 1; i < pts.size(); ++i) increasing = increasing && pts[i].ratio > pts[i - 1].ratio;
  const bool diverging = increasing && pts.back().ratio > 2.0 * pts.front().ratio;
  fit.pass = finite && fit.max_observed_ratio < 4.0 && !diverging;
  fit.points = std::move(pts);
  return fit;
}

}  // namespace

std::vector<EnvelopeFit> lemma_envelopes(const PopulationModel& model, std::span<const double> eps_grid, double delta) {
  const auto st = structure_at(model, model.x0);
  const auto sp = perron(st.B0);
  const auto d1 = static_cast<Eigen::Index>(model.d1);
  const auto d2 = static_cast<Eigen::Index>(model.d2());
  Vec x01(d1);
  for (Eigen::Index i = 0; i < d1; ++i) x01[i] = model.x0[static_cast<std::size_t>(i)];
  const Vec e1dir = d1 > 0 ? Vec(Vec::Constant(d1, 1.0 / std::sqrt(static_cast<double>(d1)))) : Vec(0);
  const Vec udir = sp.u / sp.u.norm();

  std::vector<double> eps(eps_grid.begin(), eps_grid.end());
  std::sort(eps.begin(), eps.end(), std::greater<>());
  IntegratorOptions opts;
  opts.rtol = 1e-11;
  opts.atol = 1e-16;
  const auto field = drift_field(model);
  constexpr int kSamples = 4000;

  std::vector<EnvelopeFit> out;
  if (sp.beta0 > 0.0) {
    const double beta0 = sp.beta0;
    std::vector<EnvelopePoint> p1, p2, p3;
    for (double e : eps) {
      if (!(e > 0.0 && e <= delta)) throw std::invalid_argument("lemma_envelopes: need 0 < eps <= delta");
      Vec xi0(static_cast<Eigen::Index>(model.d));
      xi0.head(d1) = x01 + e * e1dir;
      xi0.tail(d2) = e * udir;
      const double t0 = std::log(delta / e) / beta0;
      const auto traj = integrate_field(field, xi0, t0, opts);
      const double e1 = d1 > 0 ? e : 0.0;
      double sup1 = 0.0;
      double sup3 = 0.0;
      double r1 = 0.0;
      double r2 = 0.0;
      double r3 = 0.0;
      for (int k = 0; k <= kSamples; ++k) {
        const double u = t0 * k / kSamples;
        const Vec x = traj.at(u);
        if (d1 > 0) sup1 = std::max(sup1, (x.head(d1) - x01).norm());
        const double g = std::exp(-beta0 * u);
        r2 = std::max(r2, g * x.tail(d2).norm() / e);
        sup3 = std::max(sup3, g * (x.tail(d2) - matrix_exp(st.B0, u) * xi0.tail(d2)).norm());
        if (d1 > 0) r1 = std::max(r1, sup1 / (e1 + e * std::exp(beta0 * u)));
        r3 = std::max(r3, sup3 / (e * (e1 * std::log(1.0 / e) + e * std::exp(beta0 * u))));
      }
      if (d1 > 0) p1.push_back({e, r1});
      p2.push_back({e, r2});
      p3.push_back({e, r3});
    }
    if (d1 > 0) out.push_back(summarise("unstable.first_block", delta, std::move(p1)));
    out.push_back(summarise("unstable.growth", delta, std::move(p2)));
    out.push_back(summarise("unstable.linearization", delta, std::move(p3)));
  } else {
    const double beta1 = -sp.beta0;
    const auto stab = stability_check(st.C);
    if (!stab.stable) throw std::invalid_argument("lemma_envelopes: stable regime needs C with negative spectrum");
    const double kappa_p = 0.9 * std::min(stab.kappa, beta1);
    const double rate = std::min(kappa_p, beta1);
    const double T = std::log(1e4) / rate;
    std::vector<EnvelopePoint> p1, p2, p3;
    for (double dl : eps) {
      if (!(dl > 0.0)) throw std::invalid_argument("lemma_envelopes: start radii must be positive");
      Vec xi0(static_cast<Eigen::Index>(model.d));
      const double share = d1 > 0 ? dl / std::sqrt(2.0) : dl;
      xi0.head(d1) = x01 + share * e1dir;
      xi0.tail(d2) = share * udir;
      const auto traj = integrate_field(field, xi0, T, opts);
      double r1 = 0.0;
      double r2 = 0.0;
      double r3 = 0.0;
      for (int k = 0; k <= kSamples; ++k) {
        const double u = T * k / kSamples;
        const Vec x = traj.at(u);
        if (d1 > 0) r1 = std::max(r1, std::exp(kappa_p * u) * (x.head(d1) - x01).norm() / dl);
        r2 = std::max(r2, std::exp(beta1 * u) * x.tail(d2).norm() / dl);
        r3 = std::max(r3, std::exp(beta1 * u) * (x.tail(d2) - matrix_exp(st.B0, u) * xi0.tail(d2)).norm() / (dl * dl));
      }
      if (d1 > 0) p1.push_back({dl, r1});
      p2.push_back({dl, r2});
      p3.push_back({dl, r3});
    }
    if (d1 > 0) out.push_back(summarise("stable.first_block", delta, std::move(p1)));
    out.push_back(summarise("stable.decay", delta, std::move(p2)));
    out.push_back(summarise("stable.linearization", delta, std::move(p3)));
  }
  return out;
}

EscapePoint escape_point(const PopulationModel& model, double N, double delta_prime, const Vec& Z0, double alpha) {
  const auto st = structure_at(model, model.x0);
  const auto sp = perron(st.B0);
  if (!(sp.beta0 > 0.0)) throw std::invalid_argument("escape_point: model is not in the invasion regime");
  if (static_cast<std::size_t>(Z0.size()) != model.d2()) throw std::invalid_argument("escape_point: Z0 has wrong length");
  if (!(sp.v.dot(Z0) > 0.0)) throw std::invalid_argument("escape_point: v.Z0 = 0, no escape");
  TimescaleInput in;
  in.beta0 = sp.beta0;
  in.v = sp.v;
  in.Z0 = Z0;
  in.N = N;
  in.alpha = alpha;
  const auto ts = timescales(in);
  EscapePoint ep;
  ep.t_xi = *ts.t_xi_alpha;
  ep.eps_N = std::pow(N, -alpha) * sp.u.norm();
  ep.time = ep.t_xi;
  if (delta_prime != 0.0) {
    if (!(delta_prime >= ep.eps_N)) throw std::invalid_argument("escape_point: delta' must be 0 or >= eps_N");
    ep.time += std::log(delta_prime / ep.eps_N) / sp.beta0;
  }
  if (ep.time < 0.0) throw std::invalid_argument("escape_point: negative escape time (v.Z0 too large for N)");
  Vec xi0(static_cast<Eigen::Index>(model.d));
  for (std::size_t i = 0; i < model.d1; ++i) xi0[static_cast<Eigen::Index>(i)] = model.x0[i];
  xi0.tail(static_cast<Eigen::Index>(model.d2())) = Z0 / N;
  IntegratorOptions opts;
  opts.rtol = 1e-10;
  opts.atol = 1e-14;
  const auto traj = integrate_field(drift_field(model), xi0, ep.time, opts);
  ep.state = traj.final_state();
  ep.min_component = ep.state.minCoeff();
  ep.positive = ep.min_component >= 1e-8;
  return ep;
}

}  // namespace mpp
