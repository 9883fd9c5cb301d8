#pragma once

#include <span>
#include <vector>

#include "ancflow/random.hpp"

namespace ancflow {

using SimplexVector = std::vector<double>;

// ln Gamma(x) for x > 0. Thread-safe (avoids the signgam global).
double log_gamma(double x);

// ln B(a,b) for a,b > 0.
double log_beta(double a, double b);

// Regularized incomplete beta function I_z(a,b), continued-fraction
// evaluation with the symmetry switch at z > a/(a+b).
double reg_inc_beta(double z, double a, double b);

// d/da I_z(a,b). Exactly zero at z=0 and z=1; non-positive in between.
// Central differences with one Richardson extrapolation level,
// step h = max(1e-5, 1e-4*a).
double d_a_reg_inc_beta(double z, double a, double b);

double sample_gamma(double shape, RandomStream& stream);

SimplexVector sample_dirichlet(std::span<const double> alpha, RandomStream& stream);

// Index in [0, K) drawn with probability probs[i]. Input is validated
// against the simplex tolerance and renormalized internally.
std::size_t sample_categorical(std::span<const double> probs, RandomStream& stream);

// Shannon entropy in nats, with 0*ln 0 = 0.
double shannon_entropy(std::span<const double> probs);

double log_sum_exp(std::span<const double> values);

// Simplex validation used across modules: |sum-1| <= sum_tol and
// min component >= -neg_tol, after which the vector is renormalized
// in place (negatives clamped to zero).
void validate_and_renormalize_simplex(std::span<double> probs,
                                      double sum_tol = 1e-9,
                                      double neg_tol = 1e-12);

}  // namespace ancflow
