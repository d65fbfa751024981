#pragma once

#include <span>
#include <vector>

namespace mesin::entmax {

// Weights below this are snapped to exact zero and the vector renormalized,
// so reported sparsity is literal.
inline constexpr double kSupportEps = 1e-12;

// Plain softmax with max-subtraction; strictly positive output.
std::vector<double> softmax(std::span<const double> scores);

// Exact sort-based sparsemax (the gamma = 2 member of the family).
std::vector<double> sparsemax_sort(std::span<const double> scores);

// Bisection solver for the gamma-entmax mapping, gamma > 1. Works on the
// transformed scores z~ = (gamma-1) z; the normalization threshold tau lives
// in [max(z~) - 1, max(z~)] and is located with a fixed number of halvings
// (50 gives ~1e-15 interval width). Deterministic and branch-free.
std::vector<double> entmax_bisect(std::span<const double> scores, double gamma,
                                  int iterations = 50);

// Dispatching forward: gamma == 2 routes to the exact sort-based algorithm,
// every other gamma > 1 to the bisection solver. gamma <= 1 is a contract
// error (softmax must be requested explicitly).
std::vector<double> alpha_entmax(std::span<const double> scores, double gamma);

// Vector-Jacobian product at an entmax output p:
//   dz = s .* (up - <up, s>/sum(s)),  s_i = p_i^(2-gamma) on the support.
// Off-support coordinates receive exactly zero gradient.
std::vector<double> entmax_backward(std::span<const double> output,
                                    std::span<const double> upstream,
                                    double gamma);

// dz = p .* (up - <up, p>)
std::vector<double> softmax_backward(std::span<const double> output,
                                     std::span<const double> upstream);

int support_size(std::span<const double> weights);

}  // namespace mesin::entmax
