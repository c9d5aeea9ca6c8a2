#pragma once

#include <span>
#include <vector>

namespace compcal {

// Floor applied inside logarithms so that zero-probability entries stay finite.
inline constexpr double kLogEps = 1e-12;

// Tolerance for "sums to one" checks on probability vectors.
inline constexpr double kSimplexTol = 1e-6;

// True if every entry is in [0, 1] (within tolerance) and the sum is 1 +/- tol.
bool is_simplex(std::span<const double> p, double tol = kSimplexTol);

// Throws std::invalid_argument with a descriptive message if p is not a
// probability vector. `what` names the offending argument in the message.
void validate_simplex(std::span<const double> p, const char* what, double tol = kSimplexTol);

// Length-`classes` one-hot vector with a 1 at `label`.
std::vector<double> one_hot(std::size_t label, std::size_t classes);

}  // namespace compcal
