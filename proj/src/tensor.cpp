#include "shiftvit/tensor.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include <Eigen/Core>

#include "shiftvit/binary_io.hpp"

namespace shiftvit {

const char* to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << dims[0] << ',' << dims[1] << ',' << dims[2] << ',' << dims[3] << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw DimensionError("reshape " + shape_.str() + " -> " + shape.str() + " changes element count");
  }
  return Tensor(shape, data_);
}

namespace {

void check_linear(const Shape& x, const Shape& w, const Shape& b, const char* op) {
  if (w.h() != 1 || w.w() != 1 || w.c() != x.c()) {
    throw DimensionError(std::string(op) + ": input " + x.str() + " incompatible with weight " + w.str());
  }
  if (b.n() != w.n() || b.c() != 1 || b.h() != 1 || b.w() != 1) {
    throw DimensionError(std::string(op) + ": bias " + b.str() + " incompatible with weight " + w.str());
  }
}

}  // namespace

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Per sample: out_n[C_out x HW] = W[C_out x C_in] * x_n[C_in x HW] + b.
template <typename T>
Tensor<T> matmul_channels(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_linear(x.shape(), weight.shape(), bias.shape(), "matmul_channels");
  const auto n_batch = static_cast<Eigen::Index>(x.shape().n());
  const auto c_in = static_cast<Eigen::Index>(x.shape().c());
  const auto c_out = static_cast<Eigen::Index>(weight.shape().n());
  const auto hw = static_cast<Eigen::Index>(x.shape().plane());
  Tensor<T> out(Shape(x.shape().n(), weight.shape().n(), x.shape().h(), x.shape().w()));
  if (out.empty()) return out;
  ConstMatMap<T> w(weight.data().data(), c_out, c_in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data().data(), c_out);
  for (Eigen::Index n = 0; n < n_batch; ++n) {
    ConstMatMap<T> xn(x.data().data() + n * c_in * hw, c_in, hw);
    MatMap<T> on(out.data().data() + n * c_out * hw, c_out, hw);
    on.noalias() = w * xn;
    on.colwise() += b;
  }
  return out;
}

template <typename T>
LinearGrads<T> matmul_channels_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                        const Tensor<T>& weight) {
  const auto n_batch = static_cast<Eigen::Index>(x.shape().n());
  const auto c_in = static_cast<Eigen::Index>(x.shape().c());
  const auto c_out = static_cast<Eigen::Index>(weight.shape().n());
  const auto hw = static_cast<Eigen::Index>(x.shape().plane());
  require_same_shape(grad_out.shape(),
                     Shape(x.shape().n(), weight.shape().n(), x.shape().h(), x.shape().w()),
                     "matmul_channels_backward");
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()),
                   Tensor<T>(Shape(weight.shape().n(), 1, 1, 1))};
  ConstMatMap<T> w(weight.data().data(), c_out, c_in);
  MatMap<T> dw(g.weight.data().data(), c_out, c_in);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(g.bias.data().data(), c_out);
  for (Eigen::Index n = 0; n < n_batch; ++n) {
    ConstMatMap<T> xn(x.data().data() + n * c_in * hw, c_in, hw);
    ConstMatMap<T> gn(grad_out.data().data() + n * c_out * hw, c_out, hw);
    MatMap<T> dxn(g.input.data().data() + n * c_in * hw, c_in, hw);
    dxn.noalias() = w.transpose() * gn;
    dw.noalias() += gn * xn.transpose();
    db += gn.rowwise().sum();
  }
  return g;
}

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t k) {
  const Shape& s = x.shape();
  if (k == 0 || s.h() % k != 0 || s.w() % k != 0) {
    throw DimensionError("space_to_depth: extents " + s.str() + " not divisible by kernel " +
                         std::to_string(k));
  }
  const std::size_t oh = s.h() / k;
  const std::size_t ow = s.w() / k;
  Tensor<T> out(Shape(s.n(), s.c() * k * k, oh, ow));
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t dy = 0; dy < k; ++dy)
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::size_t oc = (c * k + dy) * k + dx;
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) out.at(n, oc, y, xx) = x.at(n, c, y * k + dy, xx * k + dx);
        }
  return out;
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t k) {
  const Shape& s = x.shape();
  if (k == 0 || s.c() % (k * k) != 0) {
    throw DimensionError("depth_to_space: channels of " + s.str() + " not divisible by " +
                         std::to_string(k * k));
  }
  const std::size_t c_out = s.c() / (k * k);
  Tensor<T> out(Shape(s.n(), c_out, s.h() * k, s.w() * k));
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < c_out; ++c)
      for (std::size_t dy = 0; dy < k; ++dy)
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::size_t ic = (c * k + dy) * k + dx;
          for (std::size_t y = 0; y < s.h(); ++y)
            for (std::size_t xx = 0; xx < s.w(); ++xx) out.at(n, c, y * k + dy, xx * k + dx) = x.at(n, ic, y, xx);
        }
  return out;
}

namespace {

void check_conv(const Shape& x, const Shape& w, const Shape& b, std::size_t k) {
  if (k == 0 || x.h() % k != 0 || x.w() % k != 0) {
    throw DimensionError("conv2d_nonoverlap: input extents " + x.str() + " not divisible by kernel " +
                         std::to_string(k));
  }
  if (w.c() != x.c() || w.h() != k || w.w() != k) {
    throw DimensionError("conv2d_nonoverlap: input " + x.str() + " incompatible with weight " + w.str());
  }
  if (b.n() != w.n() || b.c() != 1 || b.h() != 1 || b.w() != 1) {
    throw DimensionError("conv2d_nonoverlap: bias " + b.str() + " incompatible with weight " + w.str());
  }
}

}  // namespace

// The non-overlapping convolution is exactly space_to_depth followed by a
// per-token linear map with the flattened kernel.
template <typename T>
Tensor<T> conv2d_nonoverlap(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                            std::size_t k) {
  check_conv(x.shape(), weight.shape(), bias.shape(), k);
  const Shape& ws = weight.shape();
  Tensor<T> flat = weight.reshaped(Shape(ws.n(), ws.c() * k * k, 1, 1));
  return matmul_channels(space_to_depth(x, k), flat, bias);
}

template <typename T>
LinearGrads<T> conv2d_nonoverlap_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                          const Tensor<T>& weight, std::size_t k) {
  const Shape& ws = weight.shape();
  Tensor<T> flat = weight.reshaped(Shape(ws.n(), ws.c() * k * k, 1, 1));
  auto g = matmul_channels_backward(grad_out, space_to_depth(x, k), flat);
  g.input = depth_to_space(g.input, k);
  g.weight = g.weight.reshaped(ws);
  return g;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.plane() == 0) throw DegenerateError("global_avg_pool: empty spatial extent in " + s.str());
  Tensor<T> out(Shape(s.n(), s.c(), 1, 1));
  const std::size_t hw = s.plane();
  const T* src = x.data().data();
  for (std::size_t i = 0; i < s.n() * s.c(); ++i) {
    T acc = 0;
    for (std::size_t p = 0; p < hw; ++p) acc += src[i * hw + p];
    out[i] = acc / static_cast<T>(hw);
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  require_same_shape(grad_out.shape(), Shape(input_shape.n(), input_shape.c(), 1, 1),
                     "global_avg_pool_backward");
  Tensor<T> out(input_shape);
  const std::size_t hw = input_shape.plane();
  for (std::size_t i = 0; i < input_shape.n() * input_shape.c(); ++i) {
    const T g = grad_out[i] / static_cast<T>(hw);
    for (std::size_t p = 0; p < hw; ++p) out[i * hw + p] = g;
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T u, T v) { return u + v; }, "add");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map(a, [s](T u) { return u * s; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return map(x, [](T u) { return u > T(0) ? u : T(0); });
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
  return zip(grad_out, x, [](T g, T u) { return u > T(0) ? g : T(0); }, "relu_backward");
}

namespace {

template <typename T>
T normal_cdf(T x) {
  return T(0.5) * std::erfc(-x / std::numbers::sqrt2_v<T>);
}

template <typename T>
T normal_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

template <typename T>
constexpr T kTanhScale = T(0.7978845608028654);  // sqrt(2 / pi)

template <typename T>
constexpr T kTanhCubic = T(0.044715);

}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return map(x, [](T u) { return u * normal_cdf(u); });
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
  return zip(grad_out, x, [](T g, T u) { return g * (normal_cdf(u) + u * normal_pdf(u)); },
             "gelu_backward");
}

template <typename T>
Tensor<T> gelu_tanh(const Tensor<T>& x) {
  return map(x, [](T u) {
    const T inner = kTanhScale<T> * (u + kTanhCubic<T> * u * u * u);
    return T(0.5) * u * (T(1) + std::tanh(inner));
  });
}

template <typename T>
Tensor<T> gelu_tanh_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
  return zip(
      grad_out, x,
      [](T g, T u) {
        const T inner = kTanhScale<T> * (u + kTanhCubic<T> * u * u * u);
        const T t = std::tanh(inner);
        const T dinner = kTanhScale<T> * (T(1) + T(3) * kTanhCubic<T> * u * u);
        return g * (T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * dinner);
      },
      "gelu_tanh_backward");
}

template <typename T>
T sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return acc;
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  T acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

namespace {

constexpr char kTensorMagic[4] = {'S', 'V', 'T', '0'};

struct TensorHeader {
  Dtype dtype;
  Shape shape;
};

TensorHeader read_header(std::istream& is) {
  char magic[4];
  io::read_exact(is, magic, 4, "tensor magic");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw BadMagicError("bad tensor magic (expected SVT0)");
  const auto tag = io::read_le<std::uint8_t>(is, "tensor dtype");
  if (tag > 1) throw BadMagicError("unknown tensor dtype tag " + std::to_string(tag));
  TensorHeader h{static_cast<Dtype>(tag), {}};
  for (auto& d : h.shape.dims) d = static_cast<std::size_t>(io::read_le<std::uint64_t>(is, "tensor shape"));
  return h;
}

template <typename T>
Tensor<T> read_payload(std::istream& is, const Shape& shape) {
  std::vector<T> data(shape.numel());
  for (auto& v : data) v = io::read_le<T>(is, "tensor data");
  return Tensor<T>(shape, std::move(data));
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kTensorMagic, 4);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(Tensor<T>::dtype));
  for (auto d : t.shape().dims) io::write_le<std::uint64_t>(os, d);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(T)));
  } else {
    for (T v : t.data()) io::write_le<T>(os, v);
  }
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  const TensorHeader h = read_header(is);
  if (h.dtype != Tensor<T>::dtype) {
    throw DimensionError(std::string("stored tensor dtype ") + to_string(h.dtype) + " but " +
                         to_string(Tensor<T>::dtype) + " was requested");
  }
  return read_payload<T>(is, h.shape);
}

AnyTensor read_any_tensor(std::istream& is) {
  const TensorHeader h = read_header(is);
  if (h.dtype == Dtype::f32) return read_payload<float>(is, h.shape);
  return read_payload<double>(is, h.shape);
}

#define SHIFTVIT_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                       \
  template Tensor<T> matmul_channels(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template LinearGrads<T> matmul_channels_backward(const Tensor<T>&, const Tensor<T>&,            \
                                                   const Tensor<T>&);                             \
  template Tensor<T> space_to_depth(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> depth_to_space(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> conv2d_nonoverlap(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                       std::size_t);                                              \
  template LinearGrads<T> conv2d_nonoverlap_backward(const Tensor<T>&, const Tensor<T>&,          \
                                                     const Tensor<T>&, std::size_t);              \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                           \
  template Tensor<T> global_avg_pool_backward(const Tensor<T>&, const Shape&);                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> gelu_backward(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> gelu_tanh(const Tensor<T>&);                                                 \
  template Tensor<T> gelu_tanh_backward(const Tensor<T>&, const Tensor<T>&);                      \
  template T sum(const Tensor<T>&);                                                               \
  template T dot(const Tensor<T>&, const Tensor<T>&);                                             \
  template void write_tensor(std::ostream&, const Tensor<T>&);                                    \
  template Tensor<T> read_tensor(std::istream&);

SHIFTVIT_INSTANTIATE(float)
SHIFTVIT_INSTANTIATE(double)

#undef SHIFTVIT_INSTANTIATE

}  // namespace shiftvit
