#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>

namespace itnet {

// (b^n - 1) / (b - 1), i.e. 1 + b + ... + b^(n-1); equals n when b == 1.
inline std::uint64_t geometric_sum(std::uint64_t b, std::uint64_t n) {
  std::uint64_t sum = 0, term = 1;
  for (std::uint64_t i = 0; i < n; ++i) {
    sum += term;
    term *= b;
  }
  return sum;
}

// Samples of history seen by one output of n stacked causal convolutions with
// kernel extent T and dilations 1, b, ..., b^(n-1).
inline std::uint64_t receptive_field_plain(std::uint64_t T, std::uint64_t b, std::uint64_t n) {
  if (T < 1 || b < 1) throw std::invalid_argument("receptive field: kernel and dilation base must be >= 1");
  return 1 + (T - 1) * geometric_sum(b, n);
}

// Same for n residual blocks of m causal convolutions sharing one dilation per block.
inline std::uint64_t receptive_field_blocks(std::uint64_t m, std::uint64_t T, std::uint64_t b,
                                            std::uint64_t n) {
  if (m < 1) throw std::invalid_argument("receptive field: layers per block must be >= 1");
  if (T < 1 || b < 1) throw std::invalid_argument("receptive field: kernel and dilation base must be >= 1");
  return 1 + m * (T - 1) * geometric_sum(b, n);
}

// Smallest kernel extent T > b whose residual stack reaches target_r samples.
inline std::uint64_t plan_kernel(std::uint64_t target_r, std::uint64_t m, std::uint64_t b, std::uint64_t n) {
  if (target_r < 1) throw std::invalid_argument("plan_kernel: target receptive field must be >= 1");
  if (m < 1 || b < 1) throw std::invalid_argument("plan_kernel: layers per block and dilation base must be >= 1");
  if (n == 0 && target_r > 1) throw std::invalid_argument("plan_kernel: zero blocks cannot exceed r = 1");
  if (target_r == 1) return b + 1;
  const std::uint64_t per_tap = m * geometric_sum(b, n);
  const std::uint64_t taps = (target_r - 1 + per_tap - 1) / per_tap;
  return std::max<std::uint64_t>(b + 1, taps + 1);
}

}  // namespace itnet
