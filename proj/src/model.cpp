#include "mpp/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mpp/spectral.hpp"

namespace mpp {

namespace {

double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

std::string jump_label(std::size_t idx, const JumpSpec& j) {
  std::ostringstream os;
  os << "jump " << idx << " (";
  for (std::size_t i = 0; i < j.delta.size(); ++i) os << (i ? "," : "") << j.delta[i];
  os << ")";
  return os.str();
}

}  // namespace

double Monomial::operator()(std::span<const double> x) const {
  double r = coeff;
  for (std::size_t i = 0; i < powers.size(); ++i) {
    if (powers[i] != 0) r *= ipow(x[i], powers[i]);
  }
  return r;
}

int Monomial::degree() const {
  int deg = 0;
  for (int p : powers) deg += p;
  return deg;
}

double PolynomialRate::operator()(std::span<const double> x) const {
  double r = 0.0;
  for (const auto& m : monomials) r += m(x);
  return r;
}

PolynomialRate PolynomialRate::derivative(std::size_t k) const {
  PolynomialRate out;
  for (const auto& m : monomials) {
    if (m.powers[k] == 0) continue;
    Monomial dm = m;
    dm.coeff *= m.powers[k];
    dm.powers[k] -= 1;
    out.monomials.push_back(std::move(dm));
  }
  return out;
}

std::optional<PolynomialRate> divide_by_coordinate(const PolynomialRate& rate, std::size_t k) {
  PolynomialRate out;
  for (const auto& m : rate.monomials) {
    if (m.coeff == 0.0) continue;
    if (m.powers[k] < 1) return std::nullopt;
    Monomial q = m;
    q.powers[k] -= 1;
    out.monomials.push_back(std::move(q));
  }
  return out;
}

bool PopulationModel::changes_second_block(const JumpSpec& j) const {
  for (std::size_t i = d1; i < d; ++i) {
    if (j.delta[i] != 0) return true;
  }
  return false;
}

void PopulationModel::check_dimensions() const {
  if (d == 0) throw ModelError("model dimension d must be positive");
  if (d1 > d) throw ModelError("d1 exceeds d");
  if (N < 1) throw ModelError("population scale N must be a positive integer");
  if (x0.size() != d) throw ModelError("x0 has length " + std::to_string(x0.size()) + ", expected d");
  for (std::size_t k = 0; k < jumps.size(); ++k) {
    const auto& j = jumps[k];
    if (j.delta.size() != d) {
      throw ModelError(jump_label(k, j) + ": J has length " + std::to_string(j.delta.size()) +
                       ", expected " + std::to_string(d));
    }
    for (const auto& m : j.rate.monomials) {
      if (m.powers.size() != d) throw ModelError(jump_label(k, j) + ": monomial powers length mismatch");
      if (!std::isfinite(m.coeff)) throw ModelError(jump_label(k, j) + ": non-finite coefficient");
      for (int p : m.powers) {
        if (p < 0) throw ModelError(jump_label(k, j) + ": negative exponent");
      }
    }
  }
}

PopulationModel PopulationModel::with_scale(std::int64_t n) const {
  PopulationModel m = *this;
  m.N = n;
  return m;
}

bool ModelValidationReport::has(std::string_view id) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.id == id; });
}

Vec drift(const PopulationModel& model, std::span<const double> x) {
  Vec f = Vec::Zero(static_cast<Eigen::Index>(model.d));
  for (const auto& j : model.jumps) {
    const double g = j.rate(x);
    for (std::size_t i = 0; i < model.d; ++i) {
      if (j.delta[i] != 0) f[static_cast<Eigen::Index>(i)] += j.delta[i] * g;
    }
  }
  return f;
}

Mat jacobian(const PopulationModel& model, std::span<const double> x) {
  const auto d = static_cast<Eigen::Index>(model.d);
  Mat jac = Mat::Zero(d, d);
  for (const auto& j : model.jumps) {
    for (std::size_t k = 0; k < model.d; ++k) {
      const double dg = j.rate.derivative(k)(x);
      if (dg == 0.0) continue;
      for (std::size_t i = 0; i < model.d; ++i) {
        if (j.delta[i] != 0) jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) += j.delta[i] * dg;
      }
    }
  }
  return jac;
}

PolynomialRate gbar(const PopulationModel& model, std::size_t jump_index) {
  const auto& j = model.jumps.at(jump_index);
  if (!j.s) throw ModelError("jump " + std::to_string(jump_index) + " has no distinguished coordinate");
  auto q = divide_by_coordinate(j.rate, *j.s);
  if (!q) throw ModelError("jump " + std::to_string(jump_index) + " rate is not divisible by x_s");
  return *q;
}

namespace {

// Second-block matrix B(x) at a point; assumes the factorisation holds.
Mat assemble_B(const PopulationModel& model, std::span<const double> x) {
  const auto d2 = static_cast<Eigen::Index>(model.d2());
  Mat B = Mat::Zero(d2, d2);
  for (std::size_t k = 0; k < model.jumps.size(); ++k) {
    const auto& j = model.jumps[k];
    if (!model.changes_second_block(j)) continue;
    const double g = gbar(model, k)(x);
    const auto col = static_cast<Eigen::Index>(*j.s - model.d1);
    for (std::size_t i = model.d1; i < model.d; ++i) {
      if (j.delta[i] != 0) B(static_cast<Eigen::Index>(i - model.d1), col) += j.delta[i] * g;
    }
  }
  return B;
}

}  // namespace

ModelValidationReport validate_model(const PopulationModel& model) {
  model.check_dimensions();
  ModelValidationReport rep;
  auto add = [&](const char* id, std::string where, std::string msg) {
    rep.violations.push_back({id, std::move(where), std::move(msg)});
  };

  bool second_block_well_formed = true;
  for (std::size_t k = 0; k < model.jumps.size(); ++k) {
    const auto& j = model.jumps[k];
    if (!model.changes_second_block(j)) continue;
    const auto where = jump_label(k, j);
    if (!j.s) {
      add(violation::kMissingS, where, "second-block jump without distinguished coordinate s(J)");
      second_block_well_formed = false;
      continue;
    }
    const std::size_t s = *j.s;
    if (s < model.d1 || s >= model.d) {
      add(violation::kSRange, where, "s(J) must lie in the second block");
      second_block_well_formed = false;
      continue;
    }
    for (std::size_t i = model.d1; i < model.d; ++i) {
      if (i != s && j.delta[i] < 0) {
        add(violation::kNonNegative, where, "J_i >= 0 fails for second-block i != s at i=" + std::to_string(i));
      }
    }
    if (j.delta[s] < -1) add(violation::kSLowerBound, where, "J_s >= -1 fails");
    auto q = divide_by_coordinate(j.rate, s);
    if (!q) {
      add(violation::kFactorization, where, "g^J is not of the form gbar^J(x) x_s");
      second_block_well_formed = false;
      continue;
    }
    const double g0 = (*q)(model.x0);
    if (!(g0 > kPositivityTol)) {
      add(violation::kGbarPositive, where, "gbar^J(x0) = " + std::to_string(g0) + " is not strictly positive");
    }
  }

  for (std::size_t i = model.d1; i < model.d; ++i) {
    if (model.x0[i] != 0.0) {
      add(violation::kSecondBlockZero, "x0[" + std::to_string(i) + "]", "second block of x0 must be zero");
      break;
    }
  }

  const Vec f0 = drift(model, model.x0);
  if (f0.size() > 0 && f0.cwiseAbs().maxCoeff() > kEquilibriumTol) {
    std::ostringstream os;
    os << "F(x0) != 0, max |F_i(x0)| = " << f0.cwiseAbs().maxCoeff();
    add(violation::kEquilibrium, "x0", os.str());
  }

  if (second_block_well_formed && model.d2() > 0) {
    const Mat B0 = assemble_B(model, model.x0);
    if (!is_metzler(B0, 0.0)) add(violation::kMetzler, "B0", "B0 has a negative off-diagonal entry");
    if (!is_irreducible(B0, kPositivityTol)) add(violation::kIrreducible, "B0", "B0 is reducible");
  }

  rep.passed = rep.violations.empty();
  return rep;
}

Vec first_block_field(const PopulationModel& model, std::span<const double> w) {
  std::vector<double> x(model.d, 0.0);
  std::copy(w.begin(), w.end(), x.begin());
  Vec c = Vec::Zero(static_cast<Eigen::Index>(model.d1));
  for (const auto& j : model.jumps) {
    if (model.changes_second_block(j)) continue;
    for (const auto& m : j.rate.monomials) {
      bool pure_first = true;
      for (std::size_t i = model.d1; i < model.d; ++i) pure_first = pure_first && m.powers[i] == 0;
      if (!pure_first) continue;
      const double g = m(x);
      for (std::size_t i = 0; i < model.d1; ++i) c[static_cast<Eigen::Index>(i)] += j.delta[i] * g;
    }
  }
  return c;
}

StructureDecomposition structure_at(const PopulationModel& model, std::span<const double> x) {
  const auto rep = validate_model(model);
  if (!rep.passed) {
    throw ModelError("structure_at requires a valid model; first violation: " + rep.violations.front().id +
                     " at " + rep.violations.front().where);
  }
  const auto d1 = static_cast<Eigen::Index>(model.d1);
  const auto d2 = static_cast<Eigen::Index>(model.d2());
  StructureDecomposition out;
  out.A = Mat::Zero(d1, d2);
  out.B = assemble_B(model, x);
  out.B0 = assemble_B(model, model.x0);
  out.c = first_block_field(model, x.subspan(0, model.d1));
  out.C = Mat::Zero(d1, d1);

  for (std::size_t k = 0; k < model.jumps.size(); ++k) {
    const auto& j = model.jumps[k];
    if (model.changes_second_block(j)) {
      const double g = gbar(model, k)(x);
      const auto col = static_cast<Eigen::Index>(*j.s - model.d1);
      for (std::size_t i = 0; i < model.d1; ++i) {
        if (j.delta[i] != 0) out.A(static_cast<Eigen::Index>(i), col) += j.delta[i] * g;
      }
      continue;
    }
    // Second-block-neutral jump: cross terms go to A by dividing out the
    // first second-block coordinate present in the monomial; pure first-block
    // terms form c and contribute to C.
    for (const auto& m : j.rate.monomials) {
      std::optional<std::size_t> first2;
      for (std::size_t i = model.d1; i < model.d && !first2; ++i) {
        if (m.powers[i] > 0) first2 = i;
      }
      if (first2) {
        Monomial q = m;
        q.powers[*first2] -= 1;
        const double g = q(x);
        const auto col = static_cast<Eigen::Index>(*first2 - model.d1);
        for (std::size_t i = 0; i < model.d1; ++i) {
          if (j.delta[i] != 0) out.A(static_cast<Eigen::Index>(i), col) += j.delta[i] * g;
        }
      } else {
        for (std::size_t col = 0; col < model.d1; ++col) {
          if (m.powers[col] == 0) continue;
          Monomial dm = m;
          dm.coeff *= m.powers[col];
          dm.powers[col] -= 1;
          const double g = dm(model.x0);
          for (std::size_t i = 0; i < model.d1; ++i) {
            if (j.delta[i] != 0) out.C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col)) += j.delta[i] * g;
          }
        }
      }
    }
  }
  return out;
}

namespace {

Monomial mono(double coeff, std::vector<int> powers) { return Monomial{coeff, std::move(powers)}; }

}  // namespace

PopulationModel barebones(double a1, double a2, double gamma, Phase phase, std::int64_t N) {
  if (!(a1 > 0.0) || !(a2 > 0.0) || !(gamma > 0.0)) throw ModelError("barebones requires a1, a2, gamma > 0");
  PopulationModel m;
  m.d = 2;
  m.d1 = 1;
  m.N = N;
  // Coordinate 0 is the resident type, coordinate 1 the one near extinction.
  double resident_birth = a1;
  double rare_birth = a2;
  if (phase == Phase::kInvasion) {
    if (!(a2 > gamma * a1)) {
      throw ModelError("invasion phase requires a2 > gamma*a1 (" + std::to_string(a2) +
                       " > " + std::to_string(gamma * a1) + " fails)");
    }
    m.name = "barebones-invasion";
  } else {
    if (!(a1 < gamma * a2)) {
      throw ModelError("extinction phase requires a1 < gamma*a2 (" + std::to_string(a1) +
                       " < " + std::to_string(gamma * a2) + " fails)");
    }
    m.name = "barebones-extinction";
    resident_birth = a2;
    rare_birth = a1;
  }
  m.x0 = {resident_birth, 0.0};
  m.jumps.push_back({{1, 0}, {{mono(resident_birth, {1, 0})}}, std::nullopt});
  m.jumps.push_back({{-1, 0}, {{mono(1.0, {2, 0}), mono(gamma, {1, 1})}}, std::nullopt});
  m.jumps.push_back({{0, 1}, {{mono(rare_birth, {0, 1})}}, 1});
  m.jumps.push_back({{0, -1}, {{mono(gamma, {1, 1}), mono(1.0, {0, 2})}}, 1});
  return m;
}

PopulationModel logistic_model(std::int64_t N) {
  PopulationModel m;
  m.name = "logistic";
  m.d = 1;
  m.d1 = 0;
  m.N = N;
  m.x0 = {0.0};
  m.jumps.push_back({{1}, {{mono(1.0, {1}), mono(-1.0, {2})}}, 0});
  return m;
}

PopulationModel symmetric_two_type(double eta, std::int64_t N) {
  if (!(eta > 0.0 && eta < 0.5)) throw ModelError("symmetric_two_type requires 0 < eta < 1/2");
  PopulationModel m;
  m.name = "two-type";
  m.d = 2;
  m.d1 = 0;
  m.N = N;
  m.x0 = {0.0, 0.0};
  m.jumps.push_back({{1, 0}, {{mono(1.0 - eta, {1, 0})}}, 0});
  m.jumps.push_back({{1, 0}, {{mono(eta, {0, 1})}}, 1});
  m.jumps.push_back({{0, 1}, {{mono(eta, {1, 0})}}, 0});
  m.jumps.push_back({{0, 1}, {{mono(1.0 - eta, {0, 1})}}, 1});
  return m;
}

PopulationModel linear_birth_death(double lambda, double mu, std::int64_t N) {
  if (!(lambda > 0.0) || !(mu > 0.0)) throw ModelError("birth-death rates must be positive");
  PopulationModel m;
  m.name = "birth-death";
  m.d = 1;
  m.d1 = 0;
  m.N = N;
  m.x0 = {0.0};
  m.jumps.push_back({{1}, {{mono(lambda, {1})}}, 0});
  m.jumps.push_back({{-1}, {{mono(mu, {1})}}, 0});
  return m;
}

}  // namespace mpp
