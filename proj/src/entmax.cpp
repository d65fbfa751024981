#include "mesin/entmax.hpp"

#include <algorithm>
#include <cmath>

#include "mesin/errors.hpp"
#include "mesin/tensor.hpp"

namespace mesin::entmax {

namespace {

void require_scores(std::span<const double> scores, const char* op) {
  if (scores.empty()) throw ContractError(std::string(op) + ": empty score vector");
  for (double v : scores) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite score");
  }
}

// Snap sub-threshold weights to zero and renormalize to an exact unit sum.
void snap_and_normalize(std::vector<double>& p) {
  double total = 0.0;
  for (double& v : p) {
    if (v < kSupportEps) v = 0.0;
    total += v;
  }
  for (double& v : p) v /= total;
}

}  // namespace

std::vector<double> softmax(std::span<const double> scores) {
  require_scores(scores, "softmax");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - m);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> sparsemax_sort(std::span<const double> scores) {
  require_scores(scores, "sparsemax");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // largest k with 1 + k*z_(k) > cumsum_k
  double cumsum = 0.0, cumsum_k = 0.0;
  int k = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cumsum += sorted[i];
    if (1.0 + static_cast<double>(i + 1) * sorted[i] > cumsum) {
      k = static_cast<int>(i + 1);
      cumsum_k = cumsum;
    }
  }
  const double tau = (cumsum_k - 1.0) / static_cast<double>(k);
  std::vector<double> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) p[i] = std::max(0.0, scores[i] - tau);
  snap_and_normalize(p);
  return p;
}

std::vector<double> entmax_bisect(std::span<const double> scores, double gamma,
                                  int iterations) {
  require_scores(scores, "entmax");
  if (gamma <= 1.0) {
    throw ContractError("entmax: gamma must be > 1, got " + std::to_string(gamma) +
                        " (use softmax explicitly for the dense limit)");
  }
  const double beta = 1.0 / (gamma - 1.0);
  std::vector<double> zt(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) zt[i] = (gamma - 1.0) * scores[i];
  const double zmax = *std::max_element(zt.begin(), zt.end());

  const auto mass = [&](double tau) {
    double total = 0.0;
    for (double z : zt) {
      const double d = z - tau;
      if (d > 0.0) total += std::pow(d, beta);
    }
    return total;
  };

  // mass(lo) >= 1 (the max term alone contributes 1), mass(hi) = 0.
  double lo = zmax - 1.0, hi = zmax;
  for (int it = 0; it < iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double tau = lo;
  std::vector<double> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = zt[i] - tau;
    p[i] = d > 0.0 ? std::pow(d, beta) : 0.0;
  }
  snap_and_normalize(p);
  return p;
}

std::vector<double> alpha_entmax(std::span<const double> scores, double gamma) {
  if (gamma == 2.0) return sparsemax_sort(scores);
  return entmax_bisect(scores, gamma);
}

std::vector<double> entmax_backward(std::span<const double> output,
                                    std::span<const double> upstream,
                                    double gamma) {
  if (output.size() != upstream.size()) {
    throw ContractError("entmax backward: output length " + std::to_string(output.size()) +
                        " vs upstream length " + std::to_string(upstream.size()));
  }
  if (gamma <= 1.0) throw ContractError("entmax backward: gamma must be > 1");
  std::vector<double> s(output.size());
  double s_total = 0.0, su = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    s[i] = output[i] > 0.0 ? std::pow(output[i], 2.0 - gamma) : 0.0;
    s_total += s[i];
    su += s[i] * upstream[i];
  }
  const double shift = su / s_total;
  std::vector<double> g(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) {
    g[i] = s[i] > 0.0 ? s[i] * (upstream[i] - shift) : 0.0;
  }
  return g;
}

std::vector<double> softmax_backward(std::span<const double> output,
                                     std::span<const double> upstream) {
  if (output.size() != upstream.size()) {
    throw ContractError("softmax backward: length mismatch");
  }
  double pu = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) pu += output[i] * upstream[i];
  std::vector<double> g(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = output[i] * (upstream[i] - pu);
  return g;
}

int support_size(std::span<const double> weights) {
  int n = 0;
  for (double w : weights) n += w > 0.0 ? 1 : 0;
  return n;
}

}  // namespace mesin::entmax

// --- tape ops ---------------------------------------------------------------

namespace mesin {

Tensor Tape::softmax(const Tensor& scores) {
  if (scores.tape() != this) throw ContractError("softmax: operand belongs to a different tape");
  if (scores.ndim() != 1) throw ContractError("softmax: expects a vector, got " + shape_str(scores.shape()));
  std::vector<double> p = entmax::softmax(scores.data());
  auto pbuf = std::make_shared<std::vector<double>>(p);
  const int nz = scores.node();
  return custom("softmax", scores.shape(), std::move(p), {scores},
                [nz, pbuf](Tape& t, const std::vector<double>& up) {
                  t.add_grad(nz, entmax::softmax_backward(*pbuf, up));
                });
}

Tensor Tape::entmax(const Tensor& scores, double gamma) {
  if (scores.tape() != this) throw ContractError("entmax: operand belongs to a different tape");
  if (scores.ndim() != 1) throw ContractError("entmax: expects a vector, got " + shape_str(scores.shape()));
  std::vector<double> p = entmax::alpha_entmax(scores.data(), gamma);
  auto pbuf = std::make_shared<std::vector<double>>(p);
  const int nz = scores.node();
  return custom("entmax", scores.shape(), std::move(p), {scores},
                [nz, pbuf, gamma](Tape& t, const std::vector<double>& up) {
                  t.add_grad(nz, entmax::entmax_backward(*pbuf, up, gamma));
                });
}

}  // namespace mesin
