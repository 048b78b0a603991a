#pragma once

#include "mpp/linalg.hpp"

namespace mpp {

/// Perron data of a Metzler, irreducible B0.
///
/// `u` spans the growth direction (B0 u = beta0 u) and `v` weights the
/// population (B0^T v = beta0 v), so that v.Z(t) e^{-beta0 t} is a martingale
/// for the branching process whose mean satisfies dE Z/dt = B0 E Z.
/// Normalisation: sum(u) = 1, u.v = 1.
struct SpectralData {
  Mat B0;
  double beta0 = 0.0;
  Vec u;
  Vec v;
  double gap = 0.0;
  bool small_gap_warning = false;
};

struct StabilityReport {
  double max_real_part = 0.0;
  bool stable = false;
  double kappa = 0.0;
};

bool is_metzler(const Mat& m, double tol = 0.0);
/// Irreducibility of the directed graph with edges i->j for off-diagonal |m_ij| > tol.
bool is_irreducible(const Mat& m, double tol = 1e-14);

/// Throws std::invalid_argument naming the failed hypothesis.
SpectralData perron(const Mat& B0);

/// e^{M t} via Eigen's scaling and squaring with a degree-13 Pade approximant.
Mat matrix_exp(const Mat& M, double t = 1.0);

StabilityReport stability_check(const Mat& C);

}  // namespace mpp
