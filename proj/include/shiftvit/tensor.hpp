#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "shiftvit/error.hpp"

namespace shiftvit {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

const char* to_string(Dtype d);

/// Extents of a [N, C, H, W] tensor.
struct Shape {
  std::array<std::size_t, 4> dims{0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(std::size_t n, std::size_t c, std::size_t h, std::size_t w) : dims{n, c, h, w} {}

  constexpr std::size_t n() const { return dims[0]; }
  constexpr std::size_t c() const { return dims[1]; }
  constexpr std::size_t h() const { return dims[2]; }
  constexpr std::size_t w() const { return dims[3]; }
  constexpr std::size_t plane() const { return dims[2] * dims[3]; }
  constexpr std::size_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3]; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

/// Dense, contiguous, row-major [N, C, H, W] array. Value semantics: copies own their data.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  static constexpr Dtype dtype = dtype_of<T>();

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c() + c) * shape_.h() + h) * shape_.w() + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const { return data_[index(n, c, h, w)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  /// Same data, new extents with equal element count.
  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op);

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f, const char* op = "zip") {
  require_same_shape(a.shape(), b.shape(), op);
  Tensor<T> out(a.shape());
  auto pa = a.data();
  auto pb = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < pa.size(); ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

// ---- per-token linear map --------------------------------------------------
// weight is [C_out, C_in, 1, 1], bias is [C_out, 1, 1, 1].

template <typename T>
Tensor<T> matmul_channels(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> matmul_channels_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                        const Tensor<T>& weight);

// ---- space-to-depth and the non-overlapping convolution --------------------
// Output channel of (c, dy, dx) is c*k*k + dy*k + dx, matching a flattened
// [C_out, C_in, k, k] convolution weight.

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t k);

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t k);

/// Cross-correlation with kernel k and stride k, no padding. weight is [C_out, C_in, k, k].
template <typename T>
Tensor<T> conv2d_nonoverlap(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                            std::size_t k);

template <typename T>
LinearGrads<T> conv2d_nonoverlap_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                          const Tensor<T>& weight, std::size_t k);

// ---- pooling ----------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape);

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x);

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& grad_out, const Tensor<T>& x);

/// tanh approximation of GELU.
template <typename T>
Tensor<T> gelu_tanh(const Tensor<T>& x);

template <typename T>
Tensor<T> gelu_tanh_backward(const Tensor<T>& grad_out, const Tensor<T>& x);

template <typename T>
T sum(const Tensor<T>& x);

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b);

// ---- serialization ----------------------------------------------------------
// "SVT0", dtype byte (0 = f32, 1 = f64), 4 x u64 shape, raw little-endian data.

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

/// Reads one tensor; the stored dtype must equal T.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

AnyTensor read_any_tensor(std::istream& is);

}  // namespace shiftvit
