#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "shiftvit/tensor.hpp"

namespace shiftvit {

/// Non-negative rational number; keeps channel-group arithmetic exact (1/12 * 96 == 8).
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  constexpr Ratio() = default;
  constexpr Ratio(std::int64_t n, std::int64_t d) : num(n), den(d) {}

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  /// floor(this * count)
  std::size_t floor_times(std::size_t count) const;
  /// Lowest-terms copy.
  Ratio reduced() const;
  std::string str() const;

  /// Accepts "a/b" or a decimal such as "0.125" (converted to the closest
  /// fraction with denominator up to 1e6).
  static Ratio parse(std::string_view text);
  static Ratio from_double(double v);

  friend bool operator==(const Ratio& a, const Ratio& b) { return a.num * b.den == b.num * a.den; }
};

/// Shift direction of a channel group, in the fixed group order 0..3. "left"
/// moves content toward smaller w, i.e. out[w] = in[w + step].
enum class ShiftDirection { left = 0, right = 1, up = 2, down = 3 };

struct ShiftSpec {
  Ratio gamma{1, 12};
  std::size_t step = 1;

  /// Channels per direction: floor(gamma * channels).
  std::size_t group_size(std::size_t channels) const { return gamma.floor_times(channels); }

  /// Throws ConfigError unless 0 <= gamma <= 1/4 and 4 * group_size(channels) <= channels.
  void validate(std::size_t channels) const;
  bool valid_for(std::size_t channels) const noexcept;
};

template <typename T>
Tensor<T> shift_forward(const Tensor<T>& x, const ShiftSpec& spec);

/// Adjoint of shift_forward: each group's gradient moves the opposite way.
template <typename T>
Tensor<T> shift_backward(const Tensor<T>& grad_out, const ShiftSpec& spec);

/// Work done by one shift_forward call. Arithmetic is always zero.
struct ShiftCost {
  std::uint64_t flops = 0;
  std::uint64_t moved_copies = 0;        // scalars copied inside shifted groups
  std::uint64_t passthrough_copies = 0;  // scalars copied in the unshifted channels
  std::uint64_t zero_fills = 0;          // vacated positions written as zero

  std::uint64_t copies() const { return moved_copies + passthrough_copies; }
  /// Bytes read plus bytes written for element size `elem`.
  std::uint64_t bytes_moved(std::size_t elem) const { return (2 * copies() + zero_fills) * elem; }
};

ShiftCost shift_flop_count(const ShiftSpec& spec, const Shape& shape);

}  // namespace shiftvit
