#include "mpp/spectral.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

namespace mpp {

bool is_metzler(const Mat& m, double tol) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (i != j && m(i, j) < -tol) return false;
    }
  }
  return true;
}

bool is_irreducible(const Mat& m, double tol) {
  const Eigen::Index n = m.rows();
  if (n <= 1) return true;
  // Strongly connected iff every vertex is reachable from 0 in the graph and
  // in its transpose.
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Index> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const Eigen::Index i = stack.back();
      stack.pop_back();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double w = transpose ? m(j, i) : m(i, j);
        if (i != j && std::abs(w) > tol && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          stack.push_back(j);
        }
      }
    }
    for (char s : seen) {
      if (!s) return false;
    }
    return true;
  };
  return reach_all(false) && reach_all(true);
}

namespace {

Vec power_iterate(const Mat& M) {
  const Eigen::Index n = M.rows();
  Vec x = Vec::Constant(n, 1.0 / static_cast<double>(n));
  for (int it = 0; it < 100000; ++it) {
    Vec y = M * x;
    y /= y.sum();
    const double diff = (y - x).cwiseAbs().maxCoeff();
    x = std::move(y);
    if (diff < 1e-14) return x;
  }
  throw std::runtime_error("perron: power iteration did not converge in 1e5 iterations");
}

}  // namespace

SpectralData perron(const Mat& B0) {
  if (B0.rows() != B0.cols() || B0.rows() == 0) throw std::invalid_argument("perron: B0 must be square and non-empty");
  if (!is_metzler(B0)) throw std::invalid_argument("perron: B0 is not Metzler (negative off-diagonal entry)");
  if (!is_irreducible(B0)) throw std::invalid_argument("perron: B0 is reducible");

  const Eigen::Index n = B0.rows();
  const double sigma = B0.diagonal().cwiseAbs().maxCoeff() + 1.0;
  const Mat shifted = B0 + sigma * Mat::Identity(n, n);

  SpectralData out;
  out.B0 = B0;
  out.u = power_iterate(shifted);
  Vec v = power_iterate(shifted.transpose());
  out.u /= out.u.sum();
  v /= out.u.dot(v);
  out.v = std::move(v);
  out.beta0 = out.v.dot(B0 * out.u) / out.v.dot(out.u);

  if (n == 1) {
    out.gap = std::numeric_limits<double>::infinity();
  } else {
    Eigen::EigenSolver<Mat> es(B0, false);
    const Eigen::VectorXd re = es.eigenvalues().real();
    // Drop the eigenvalue closest to beta0 and take the largest remaining real part.
    Eigen::Index dom = 0;
    (re.array() - out.beta0).abs().minCoeff(&dom);
    double next = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < re.size(); ++i) {
      if (i != dom) next = std::max(next, re[i]);
    }
    out.gap = out.beta0 - next;
  }
  out.small_gap_warning = out.gap <= 1e-10;
  return out;
}

Mat matrix_exp(const Mat& M, double t) {
  if (!std::isfinite(t)) throw std::invalid_argument("matrix_exp: t must be finite");
  if (M.size() == 0) return M;
  const Mat scaled = M * t;
  return scaled.exp();
}

StabilityReport stability_check(const Mat& C) {
  if (C.rows() != C.cols()) throw std::invalid_argument("stability_check: C must be square");
  StabilityReport rep;
  if (C.size() == 0) {
    rep.max_real_part = -std::numeric_limits<double>::infinity();
    rep.stable = true;
    rep.kappa = std::numeric_limits<double>::infinity();
    return rep;
  }
  Eigen::EigenSolver<Mat> es(C, false);
  rep.max_real_part = es.eigenvalues().real().maxCoeff();
  rep.stable = rep.max_real_part < 0.0;
  rep.kappa = rep.stable ? -rep.max_real_part : 0.0;
  return rep;
}

}  // namespace mpp
