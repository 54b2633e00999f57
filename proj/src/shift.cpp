#include "shiftvit/shift.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>

namespace shiftvit {

std::size_t Ratio::floor_times(std::size_t count) const {
  return static_cast<std::size_t>((num * static_cast<std::int64_t>(count)) / den);
}

Ratio Ratio::reduced() const {
  const std::int64_t g = std::gcd(num, den);
  return g == 0 ? Ratio{0, 1} : Ratio{num / g, den / g};
}

std::string Ratio::str() const {
  const Ratio r = reduced();
  if (r.num == 0) return "0";
  if (r.den == 1) return std::to_string(r.num);
  return std::to_string(r.num) + "/" + std::to_string(r.den);
}

Ratio Ratio::from_double(double v) {
  if (!std::isfinite(v) || v < 0) throw ConfigError("ratio must be a finite non-negative number");
  // Stern-Brocot style continued-fraction expansion.
  constexpr std::int64_t kMaxDen = 1'000'000;
  std::int64_t h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  double x = v;
  for (int iter = 0; iter < 64; ++iter) {
    const auto a = static_cast<std::int64_t>(std::floor(x));
    const std::int64_t h2 = a * h1 + h0;
    const std::int64_t k2 = a * k1 + k0;
    if (k2 > kMaxDen) break;
    h0 = h1;
    h1 = h2;
    k0 = k1;
    k1 = k2;
    const double frac = x - static_cast<double>(a);
    if (std::abs(static_cast<double>(h1) / static_cast<double>(k1) - v) < 1e-12 || frac < 1e-12) break;
    x = 1.0 / frac;
  }
  return Ratio{h1, k1}.reduced();
}

Ratio Ratio::parse(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) {
    double v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("cannot parse ratio '" + std::string(text) + "'");
    return from_double(v);
  }
  std::int64_t n = 0, d = 0;
  auto num_part = text.substr(0, slash);
  auto den_part = text.substr(slash + 1);
  auto [p1, e1] = std::from_chars(num_part.data(), num_part.data() + num_part.size(), n);
  auto [p2, e2] = std::from_chars(den_part.data(), den_part.data() + den_part.size(), d);
  if (e1 != std::errc() || e2 != std::errc() || p1 != num_part.data() + num_part.size() ||
      p2 != den_part.data() + den_part.size() || d <= 0 || n < 0) {
    throw ConfigError("cannot parse ratio '" + std::string(text) + "'");
  }
  return Ratio{n, d}.reduced();
}

bool ShiftSpec::valid_for(std::size_t channels) const noexcept {
  if (gamma.den <= 0 || gamma.num < 0) return false;
  if (gamma.num * 4 > gamma.den) return false;
  return 4 * group_size(channels) <= channels;
}

void ShiftSpec::validate(std::size_t channels) const {
  if (!valid_for(channels)) {
    throw ConfigError("shift spec gamma=" + gamma.str() + " invalid for " + std::to_string(channels) +
                      " channels (need 0 <= gamma <= 1/4 and 4*floor(gamma*C) <= C)");
  }
}

namespace {

struct Offset {
  std::ptrdiff_t dy;
  std::ptrdiff_t dx;
};

// out[h][w] = in[h + dy][w + dx] for group directions left, right, up, down.
Offset group_offset(std::size_t group, std::size_t step, bool adjoint) {
  const auto s = static_cast<std::ptrdiff_t>(step) * (adjoint ? -1 : 1);
  switch (group) {
    case 0: return {0, s};
    case 1: return {0, -s};
    case 2: return {s, 0};
    default: return {-s, 0};
  }
}

template <typename T>
void shift_plane(const T* src, T* dst, std::size_t height, std::size_t width, Offset off) {
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  std::fill(dst, dst + height * width, T(0));
  if (std::abs(off.dy) >= h || std::abs(off.dx) >= w) return;
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -off.dy);
  const std::ptrdiff_t y1 = std::min(h, h - off.dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -off.dx);
  const std::ptrdiff_t x1 = std::min(w, w - off.dx);
  const auto run = static_cast<std::size_t>(x1 - x0);
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    std::memcpy(dst + y * w + x0, src + (y + off.dy) * w + x0 + off.dx, run * sizeof(T));
  }
}

template <typename T>
Tensor<T> apply_shift(const Tensor<T>& x, const ShiftSpec& spec, bool adjoint) {
  const Shape& s = x.shape();
  spec.validate(s.c());
  const std::size_t g = spec.group_size(s.c());
  Tensor<T> out(s);
  const std::size_t hw = s.plane();
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const std::size_t off = (n * s.c() + c) * hw;
      const std::size_t group = g == 0 ? 4 : c / g;
      if (group < 4 && spec.step > 0) {
        shift_plane(src + off, dst + off, s.h(), s.w(), group_offset(group, spec.step, adjoint));
      } else if (hw > 0) {
        std::memcpy(dst + off, src + off, hw * sizeof(T));
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> shift_forward(const Tensor<T>& x, const ShiftSpec& spec) {
  return apply_shift(x, spec, false);
}

template <typename T>
Tensor<T> shift_backward(const Tensor<T>& grad_out, const ShiftSpec& spec) {
  return apply_shift(grad_out, spec, true);
}

ShiftCost shift_flop_count(const ShiftSpec& spec, const Shape& shape) {
  spec.validate(shape.c());
  const std::size_t g = spec.group_size(shape.c());
  ShiftCost cost;
  const std::uint64_t hw = shape.plane();
  const std::uint64_t n = shape.n();
  if (spec.step == 0) {
    cost.passthrough_copies = n * shape.c() * hw;
    return cost;
  }
  const std::uint64_t kept_h = shape.h() > spec.step ? shape.h() - spec.step : 0;
  const std::uint64_t kept_w = shape.w() > spec.step ? shape.w() - spec.step : 0;
  // left/right keep H x (W - s) positions; up/down keep (H - s) x W.
  const std::uint64_t horiz = kept_w == 0 ? 0 : shape.h() * kept_w;
  const std::uint64_t vert = kept_h == 0 ? 0 : kept_h * shape.w();
  cost.moved_copies = n * g * 2 * (horiz + vert);
  cost.zero_fills = n * g * 4 * hw - cost.moved_copies;
  cost.passthrough_copies = n * (shape.c() - 4 * g) * hw;
  return cost;
}

template Tensor<float> shift_forward(const Tensor<float>&, const ShiftSpec&);
template Tensor<double> shift_forward(const Tensor<double>&, const ShiftSpec&);
template Tensor<float> shift_backward(const Tensor<float>&, const ShiftSpec&);
template Tensor<double> shift_backward(const Tensor<double>&, const ShiftSpec&);

}  // namespace shiftvit
