#pragma once
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "agsa/autodiff.hpp"
#include "agsa/gradcheck.hpp"
#include "agsa/rng.hpp"

namespace agsa::test {

using ad::Shape;
using ad::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Sum of the output weighted by fixed coefficients.
inline Tensor probe(const Tensor& out, const Tensor& weights) { return ad::sum(ad::mul(out, weights)); }

inline constexpr int kSeeds = 5;

}  // namespace agsa::test
