#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpp/linalg.hpp"

namespace mpp {

/// Thrown for inputs that are structurally malformed (dimension mismatches,
/// invalid parameters). Violations of the modelling assumptions are reported
/// through ModelValidationReport instead.
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Monomial {
  double coeff = 0.0;
  std::vector<int> powers;

  double operator()(std::span<const double> x) const;
  int degree() const;
};

/// A rate function g(x) written as a sum of monomials in the density vector.
struct PolynomialRate {
  std::vector<Monomial> monomials;

  double operator()(std::span<const double> x) const;
  /// Exact partial derivative d/dx_k.
  PolynomialRate derivative(std::size_t k) const;
  bool is_zero() const { return monomials.empty(); }
};

/// Divide every monomial of `rate` by x_k. Returns nullopt when some monomial
/// does not contain x_k.
std::optional<PolynomialRate> divide_by_coordinate(const PolynomialRate& rate, std::size_t k);

struct JumpSpec {
  std::vector<int> delta;
  PolynomialRate rate;
  /// Distinguished coordinate s(J), a 0-based index in [d1, d). Required when
  /// the jump changes the second block.
  std::optional<std::size_t> s;
};

/// Density-dependent Markov population process: X -> X + J at rate N g^J(X/N).
/// Coordinates [0, d1) form the first block, [d1, d) the second block.
struct PopulationModel {
  std::string name;
  std::size_t d = 0;
  std::size_t d1 = 0;
  std::int64_t N = 1;
  std::vector<double> x0;
  std::vector<JumpSpec> jumps;

  std::size_t d2() const { return d - d1; }
  bool changes_second_block(const JumpSpec& j) const;
  /// Throws ModelError on dimension mismatches.
  void check_dimensions() const;
  /// Same model at a different population scale.
  PopulationModel with_scale(std::int64_t n) const;
};

struct Violation {
  std::string id;
  std::string where;
  std::string message;
};

struct ModelValidationReport {
  bool passed = true;
  std::vector<Violation> violations;

  bool has(std::string_view id) const;
};

/// Violation ids reported by validate_model.
namespace violation {
inline constexpr const char* kMissingS = "s_missing";
inline constexpr const char* kSRange = "s_range";
inline constexpr const char* kFactorization = "factorization";
inline constexpr const char* kNonNegative = "second_block_nonnegative";
inline constexpr const char* kSLowerBound = "s_lower_bound";
inline constexpr const char* kGbarPositive = "gbar_positive";
inline constexpr const char* kSecondBlockZero = "x0_second_block_zero";
inline constexpr const char* kEquilibrium = "equilibrium";
inline constexpr const char* kMetzler = "metzler";
inline constexpr const char* kIrreducible = "irreducible";
}  // namespace violation

inline constexpr double kEquilibriumTol = 1e-12;
inline constexpr double kPositivityTol = 1e-14;

ModelValidationReport validate_model(const PopulationModel& model);

Vec drift(const PopulationModel& model, std::span<const double> x);
Mat jacobian(const PopulationModel& model, std::span<const double> x);

/// gbar^J for a second-block jump, i.e. g^J / x_{s(J)}.
PolynomialRate gbar(const PopulationModel& model, std::size_t jump_index);

struct StructureDecomposition {
  Mat A;  // d1 x d2
  Mat B;  // d2 x d2
  Vec c;  // d1, c(x^(1)) = drift of second-block-neutral jumps at (x^(1), 0)
  Mat C;  // d1 x d1, Jacobian of c at x0^(1)
  Mat B0; // d2 x d2, B(x0)
};

StructureDecomposition structure_at(const PopulationModel& model, std::span<const double> x);

/// c(w) for w in the first block.
Vec first_block_field(const PopulationModel& model, std::span<const double> w);

enum class Phase { kInvasion, kExtinction };

/// Two-morph competition model. Invasion: x = (wild, mutant), x0 = (a1, 0).
/// Extinction: coordinates swapped, x = (mutant, wild), x0 = (a2, 0).
PopulationModel barebones(double a1, double a2, double gamma, Phase phase, std::int64_t N = 1000);

/// Stochastic logistic growth X -> X+1 at rate X(1 - X/N), d1 = 0.
PopulationModel logistic_model(std::int64_t N = 1000);

/// Two-type pure birth model with type mixing eta, d1 = 0.
PopulationModel symmetric_two_type(double eta, std::int64_t N = 1000);

/// Linear birth-death model, d1 = 0: X -> X+1 at rate lambda X, X -> X-1 at rate mu X.
PopulationModel linear_birth_death(double lambda, double mu, std::int64_t N = 1000);

}  // namespace mpp
