#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mesin/entmax.hpp"
#include "mesin/rng.hpp"
#include "mesin/tensor.hpp"

using namespace mesin;

namespace {

std::vector<double> random_scores(Rng& rng, int n, double spread = 3.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(-spread, spread);
  return v;
}

double linf(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Independent threshold oracle: locate tau by coarse-to-fine grid scan over
// the bracketing interval instead of sign bisection.
std::vector<double> entmax_grid_oracle(const std::vector<double>& scores, double gamma) {
  const double beta = 1.0 / (gamma - 1.0);
  std::vector<double> zt(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) zt[i] = (gamma - 1.0) * scores[i];
  const double zmax = *std::max_element(zt.begin(), zt.end());
  auto mass = [&](double tau) {
    double total = 0.0;
    for (double z : zt)
      if (z > tau) total += std::pow(z - tau, beta);
    return total;
  };
  double lo = zmax - 1.0, hi = zmax;
  for (int stage = 0; stage < 6; ++stage) {
    const int kGrid = 400;
    double best_tau = lo, best_err = 1e300;
    for (int i = 0; i <= kGrid; ++i) {
      const double tau = lo + (hi - lo) * i / kGrid;
      const double err = std::abs(mass(tau) - 1.0);
      if (err < best_err) {
        best_err = err;
        best_tau = tau;
      }
    }
    const double width = (hi - lo) / kGrid;
    lo = best_tau - width;
    hi = best_tau + width;
  }
  const double tau = 0.5 * (lo + hi);
  std::vector<double> p(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = zt[i] > tau ? std::pow(zt[i] - tau, beta) : 0.0;
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

void check_simplex(const std::vector<double>& p) {
  double sum = 0.0;
  int support = 0;
  for (double v : p) {
    CHECK(v >= 0.0);
    sum += v;
    support += v > 0.0 ? 1 : 0;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(support >= 1);
}

}  // namespace

TEST_SUITE_BEGIN("entmax");

TEST_CASE("softmax basics") {
  SUBCASE("symmetric input gives the uniform vector") {
    auto p = entmax::softmax(std::vector<double>{0, 0, 0});
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
  SUBCASE("single element maps to [1]") {
    for (double c : {-40.0, 0.0, 3.5}) {
      auto p = entmax::softmax(std::vector<double>{c});
      CHECK(p[0] == 1.0);
    }
  }
  SUBCASE("matches direct evaluation") {
    std::vector<double> z{1, 0, -1};
    auto p = entmax::softmax(z);
    double denom = std::exp(1.0) + 1.0 + std::exp(-1.0);
    CHECK(p[0] == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(1.0 / denom).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(std::exp(-1.0) / denom).epsilon(1e-12));
  }
  SUBCASE("empty input is a contract error") {
    CHECK_THROWS_AS(entmax::softmax(std::vector<double>{}), ContractError);
  }
  SUBCASE("shift invariance") {
    Rng rng(3);
    auto z = random_scores(rng, 6);
    auto zs = z;
    for (double& v : zs) v += 11.25;
    CHECK(linf(entmax::softmax(z), entmax::softmax(zs)) < 1e-12);
  }
}

TEST_CASE("alpha_entmax basics") {
  SUBCASE("gamma <= 1 is a contract error") {
    std::vector<double> z{1, 2};
    CHECK_THROWS_AS(entmax::alpha_entmax(z, 1.0), ContractError);
    CHECK_THROWS_AS(entmax::alpha_entmax(z, 0.5), ContractError);
  }
  SUBCASE("sparsemax of [1,0,-1] keeps only the top score") {
    auto p = entmax::alpha_entmax(std::vector<double>{1, 0, -1}, 2.0);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == 0.0);
    CHECK(p[2] == 0.0);
  }
  SUBCASE("equal scores give the uniform vector for any gamma") {
    for (double gamma : {1.1, 1.3, 1.5, 2.0, 3.0}) {
      auto p = entmax::alpha_entmax(std::vector<double>{0.7, 0.7, 0.7, 0.7}, gamma);
      for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }
  }
  SUBCASE("gamma just above 1 approaches softmax") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      auto z = random_scores(rng, 5);
      auto p = entmax::alpha_entmax(z, 1.0001);
      auto q = entmax::softmax(z);
      CHECK(linf(p, q) < 1e-3);
    }
  }
}

TEST_CASE("bisection matches the sort-based sparsemax at gamma=2") {
  Rng rng(29);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(1, 8);
    auto z = random_scores(rng, n);
    auto bisect = entmax::entmax_bisect(z, 2.0);
    auto sorted = entmax::sparsemax_sort(z);
    worst = std::max(worst, linf(bisect, sorted));
  }
  INFO("worst L_inf = " << worst);
  CHECK(worst < 1e-6);
}

TEST_CASE("bisection matches the dense threshold-grid oracle") {
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(2, 8);
    auto z = random_scores(rng, n);
    const double gamma = rng.uniform(1.05, 2.5);
    worst = std::max(worst, linf(entmax::entmax_bisect(z, gamma),
                                 entmax_grid_oracle(z, gamma)));
  }
  INFO("worst L_inf = " << worst);
  CHECK(worst < 1e-6);
}

TEST_CASE("simplex invariants over random vectors") {
  Rng rng(37);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(1, 8);
    auto z = random_scores(rng, n);
    const double gamma = rng.uniform(1.01, 3.0);
    check_simplex(entmax::alpha_entmax(z, gamma));
  }
}

TEST_CASE("support size is monotone in gamma") {
  Rng rng(43);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(2, 8);
    auto z = random_scores(rng, n);
    const int s2 = entmax::support_size(entmax::alpha_entmax(z, 2.0));
    const int s15 = entmax::support_size(entmax::alpha_entmax(z, 1.5));
    const int s1 = entmax::support_size(entmax::alpha_entmax(z, 1.0001));
    CHECK(s2 <= s15);
    CHECK(s15 <= s1);
  }
}

TEST_CASE("permutation equivariance and shift invariance") {
  Rng rng(47);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(2, 8);
    auto z = random_scores(rng, n);
    const double gamma = rng.uniform(1.1, 2.5);

    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    std::vector<double> zp(z.size());
    for (int i = 0; i < n; ++i) zp[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];

    auto p = entmax::alpha_entmax(z, gamma);
    auto pp = entmax::alpha_entmax(zp, gamma);
    for (int i = 0; i < n; ++i) {
      CHECK(pp[static_cast<std::size_t>(i)] ==
            doctest::Approx(p[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]).epsilon(1e-12));
    }

    auto zs = z;
    const double c = rng.uniform(-20.0, 20.0);
    for (double& v : zs) v += c;
    CHECK(linf(entmax::alpha_entmax(zs, gamma), p) < 1e-9);
  }
}

TEST_CASE("entmax backward") {
  SUBCASE("uniform output and uniform upstream give zero gradient") {
    std::vector<double> p{0.25, 0.25, 0.25, 0.25};
    std::vector<double> up{1.0, 1.0, 1.0, 1.0};
    auto g = entmax::entmax_backward(p, up, 1.5);
    for (double v : g) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("off-support coordinates get exactly zero gradient") {
    std::vector<double> z{2.0, 0.1, -2.0};
    auto p = entmax::alpha_entmax(z, 2.0);
    REQUIRE(p[2] == 0.0);
    auto g = entmax::entmax_backward(p, {0.3, -0.7, 5.0}, 2.0);
    CHECK(g[2] == 0.0);
  }
  SUBCASE("matches finite differences on stable support") {
    Rng rng(53);
    int checked = 0;
    while (checked < 40) {
      auto z = random_scores(rng, 5, 1.5);
      // keep a safety margin from support-change boundaries
      auto p0 = entmax::alpha_entmax(z, 1.5);
      bool near_boundary = false;
      for (double v : p0)
        if (v > 0.0 && v < 1e-3) near_boundary = true;
      if (near_boundary) continue;
      ++checked;
      auto f = [&](Tape& t, const std::vector<Tensor>& in) {
        Tensor p = t.entmax(in[0], 1.5);
        return t.dot(p, p);
      };
      auto rep = grad_check(f, {5}, z, 1e-6, 1e-4);
      INFO(rep.to_string());
      CHECK(rep.pass);
    }
  }
  SUBCASE("dimension mismatch is a contract error") {
    CHECK_THROWS_AS(entmax::entmax_backward(std::vector<double>{0.5, 0.5},
                                            std::vector<double>{1.0}, 1.5),
                    ContractError);
  }
}

TEST_SUITE_END();
