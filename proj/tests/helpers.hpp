#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "shiftvit/rng.hpp"
#include "shiftvit/tensor.hpp"

namespace shiftvit::test {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

/// Small integers, so sums and products are exact in any float type.
template <typename T = double>
Tensor<T> integer_tensor(Shape shape, Rng& rng, int lo = -4, int hi = 4) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))));
  return t;
}

/// 1, 2, 3, ... in storage order.
template <typename T = double>
Tensor<T> iota_tensor(Shape shape) {
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(i + 1);
  return t;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

inline Shape random_shape(Rng& rng, std::size_t max_n, std::size_t max_c, std::size_t max_hw) {
  return Shape(pick(rng, 1, max_n), pick(rng, 1, max_c), pick(rng, 1, max_hw), pick(rng, 1, max_hw));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
double norm2(const Tensor<T>& a) {
  double s = 0;
  for (T v : a.data()) s += double(v) * double(v);
  return std::sqrt(s);
}

}  // namespace shiftvit::test
