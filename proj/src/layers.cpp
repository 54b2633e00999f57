#include "shiftvit/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace shiftvit {

namespace {

void check_affine(const Shape& x, const Shape& gain, const Shape& bias, const char* op) {
  const Shape want(x.c(), 1, 1, 1);
  if (gain != want || bias != want) {
    throw DimensionError(std::string(op) + ": gain " + gain.str() + " / bias " + bias.str() +
                         " do not match input " + x.str());
  }
}

}  // namespace

template <typename T>
NormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const Shape& s = x.shape();
  if (s.c() == 0) throw DegenerateError("layer_norm: zero channels in " + s.str());
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  check_affine(s, gain.shape(), bias.shape(), "layer_norm");
  const std::size_t c_count = s.c();
  const std::size_t hw = s.plane();
  NormResult<T> r{Tensor<T>(s), Tensor<T>(s), std::vector<T>(s.n() * hw)};
  const T* xs = x.data().data();
  T* ys = r.out.data().data();
  T* xh = r.normalized.data().data();
  for (std::size_t n = 0; n < s.n(); ++n) {
    const std::size_t base = n * c_count * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      T mean = 0;
      for (std::size_t c = 0; c < c_count; ++c) mean += xs[base + c * hw + p];
      mean /= static_cast<T>(c_count);
      T var = 0;
      for (std::size_t c = 0; c < c_count; ++c) {
        const T d = xs[base + c * hw + p] - mean;
        var += d * d;
      }
      var /= static_cast<T>(c_count);
      const T inv = T(1) / std::sqrt(var + eps);
      r.inv_std[n * hw + p] = inv;
      for (std::size_t c = 0; c < c_count; ++c) {
        const std::size_t i = base + c * hw + p;
        xh[i] = (xs[i] - mean) * inv;
        ys[i] = gain[c] * xh[i] + bias[c];
      }
    }
  }
  return r;
}

template <typename T>
LinearGrads<T> layer_norm_backward(const Tensor<T>& grad_out, const NormResult<T>& fwd,
                                   const Tensor<T>& gain) {
  const Shape& s = fwd.normalized.shape();
  require_same_shape(grad_out.shape(), s, "layer_norm_backward");
  const std::size_t c_count = s.c();
  const std::size_t hw = s.plane();
  LinearGrads<T> g{Tensor<T>(s), Tensor<T>(gain.shape()), Tensor<T>(gain.shape())};
  const T* gs = grad_out.data().data();
  const T* xh = fwd.normalized.data().data();
  T* dx = g.input.data().data();
  for (std::size_t n = 0; n < s.n(); ++n) {
    const std::size_t base = n * c_count * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      T mean_d = 0;
      T mean_dx = 0;
      for (std::size_t c = 0; c < c_count; ++c) {
        const std::size_t i = base + c * hw + p;
        const T d = gs[i] * gain[c];
        mean_d += d;
        mean_dx += d * xh[i];
        g.weight[c] += gs[i] * xh[i];
        g.bias[c] += gs[i];
      }
      mean_d /= static_cast<T>(c_count);
      mean_dx /= static_cast<T>(c_count);
      const T inv = fwd.inv_std[n * hw + p];
      for (std::size_t c = 0; c < c_count; ++c) {
        const std::size_t i = base + c * hw + p;
        dx[i] = inv * (gs[i] * gain[c] - mean_d - xh[i] * mean_dx);
      }
    }
  }
  return g;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::fresh(std::size_t channels) {
  return BatchNormState{Tensor<T>(Shape(channels, 1, 1, 1), T(0)), Tensor<T>(Shape(channels, 1, 1, 1), T(1)),
                        0};
}

template <typename T>
void BatchNormState<T>::seed(Tensor<T> mean, Tensor<T> var) {
  require_same_shape(mean.shape(), running_mean.shape(), "BatchNormState::seed");
  require_same_shape(var.shape(), running_var.shape(), "BatchNormState::seed");
  running_mean = std::move(mean);
  running_var = std::move(var);
  updates = std::max<std::uint64_t>(updates, 1);
}

template <typename T>
NormResult<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                               BatchNormState<T>& state, T eps, T momentum) {
  const Shape& s = x.shape();
  check_affine(s, gain.shape(), bias.shape(), "batch_norm");
  require_same_shape(state.running_mean.shape(), gain.shape(), "batch_norm running stats");
  const std::size_t count = s.n() * s.plane();
  if (count < 2) {
    throw ContractError("batch_norm: training mode needs N*H*W >= 2 per channel, got " + s.str());
  }
  const std::size_t hw = s.plane();
  NormResult<T> r{Tensor<T>(s), Tensor<T>(s), std::vector<T>(s.c())};
  const T* xs = x.data().data();
  for (std::size_t c = 0; c < s.c(); ++c) {
    T mean = 0;
    for (std::size_t n = 0; n < s.n(); ++n)
      for (std::size_t p = 0; p < hw; ++p) mean += xs[(n * s.c() + c) * hw + p];
    mean /= static_cast<T>(count);
    T var = 0;
    for (std::size_t n = 0; n < s.n(); ++n)
      for (std::size_t p = 0; p < hw; ++p) {
        const T d = xs[(n * s.c() + c) * hw + p] - mean;
        var += d * d;
      }
    var /= static_cast<T>(count);
    const T inv = T(1) / std::sqrt(var + eps);
    r.inv_std[c] = inv;
    for (std::size_t n = 0; n < s.n(); ++n)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (n * s.c() + c) * hw + p;
        r.normalized[i] = (xs[i] - mean) * inv;
        r.out[i] = gain[c] * r.normalized[i] + bias[c];
      }
    state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * mean;
    state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * var;
  }
  ++state.updates;
  return r;
}

template <typename T>
LinearGrads<T> batch_norm_train_backward(const Tensor<T>& grad_out, const NormResult<T>& fwd,
                                         const Tensor<T>& gain) {
  const Shape& s = fwd.normalized.shape();
  require_same_shape(grad_out.shape(), s, "batch_norm_backward");
  const std::size_t hw = s.plane();
  const auto count = static_cast<T>(s.n() * hw);
  LinearGrads<T> g{Tensor<T>(s), Tensor<T>(gain.shape()), Tensor<T>(gain.shape())};
  for (std::size_t c = 0; c < s.c(); ++c) {
    T sum_g = 0;
    T sum_gx = 0;
    for (std::size_t n = 0; n < s.n(); ++n)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (n * s.c() + c) * hw + p;
        sum_g += grad_out[i];
        sum_gx += grad_out[i] * fwd.normalized[i];
      }
    g.bias[c] = sum_g;
    g.weight[c] = sum_gx;
    const T k = gain[c] * fwd.inv_std[c] / count;
    for (std::size_t n = 0; n < s.n(); ++n)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (n * s.c() + c) * hw + p;
        g.input[i] = k * (count * grad_out[i] - sum_g - fwd.normalized[i] * sum_gx);
      }
  }
  return g;
}

template <typename T>
NormResult<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                              const BatchNormState<T>& state, T eps) {
  const Shape& s = x.shape();
  check_affine(s, gain.shape(), bias.shape(), "batch_norm");
  if (state.updates == 0) {
    throw UninitializedStatsError("batch_norm: eval mode before any training step (no running statistics)");
  }
  const std::size_t hw = s.plane();
  NormResult<T> r{Tensor<T>(s), Tensor<T>(s), std::vector<T>(s.c())};
  for (std::size_t c = 0; c < s.c(); ++c) r.inv_std[c] = T(1) / std::sqrt(state.running_var[c] + eps);
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (n * s.c() + c) * hw + p;
        r.normalized[i] = (x[i] - state.running_mean[c]) * r.inv_std[c];
        r.out[i] = gain[c] * r.normalized[i] + bias[c];
      }
  return r;
}

template <typename T>
LinearGrads<T> batch_norm_eval_backward(const Tensor<T>& grad_out, const NormResult<T>& fwd,
                                        const Tensor<T>& gain) {
  const Shape& s = fwd.normalized.shape();
  require_same_shape(grad_out.shape(), s, "batch_norm_backward");
  const std::size_t hw = s.plane();
  LinearGrads<T> g{Tensor<T>(s), Tensor<T>(gain.shape()), Tensor<T>(gain.shape())};
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (n * s.c() + c) * hw + p;
        g.input[i] = grad_out[i] * gain[c] * fwd.inv_std[c];
        g.weight[c] += grad_out[i] * fwd.normalized[i];
        g.bias[c] += grad_out[i];
      }
  return g;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> labels) {
  const Shape& s = logits.shape();
  if (s.h() != 1 || s.w() != 1) throw DimensionError("softmax_cross_entropy: logits must be [N,K,1,1], got " + s.str());
  if (labels.size() != s.n()) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + s.str());
  }
  const std::size_t k = s.c();
  LossResult<T> r{T(0), Tensor<T>(s)};
  if (s.n() == 0) return r;
  const T inv_n = T(1) / static_cast<T>(s.n());
  T total = 0;
  for (std::size_t n = 0; n < s.n(); ++n) {
    if (labels[n] >= k) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(labels[n]) + " out of range [0," +
                          std::to_string(k) + ")");
    }
    const T* row = logits.data().data() + n * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const T log_z = std::log(z) + mx;
    total += log_z - row[labels[n]];
    T* grow = r.grad.data().data() + n * k;
    for (std::size_t j = 0; j < k; ++j) grow[j] = std::exp(row[j] - log_z) * inv_n;
    grow[labels[n]] -= inv_n;
  }
  r.loss = total * inv_n;
  return r;
}

template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits) {
  const std::size_t k = logits.shape().c();
  std::vector<std::uint32_t> out(logits.shape().n());
  for (std::size_t n = 0; n < out.size(); ++n) {
    const T* row = logits.data().data() + n * k;
    out[n] = static_cast<std::uint32_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

#define SHIFTVIT_INSTANTIATE(T)                                                                           \
  template struct BatchNormState<T>;                                                                      \
  template NormResult<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);              \
  template LinearGrads<T> layer_norm_backward(const Tensor<T>&, const NormResult<T>&, const Tensor<T>&);   \
  template NormResult<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                          BatchNormState<T>&, T, T);                                       \
  template LinearGrads<T> batch_norm_train_backward(const Tensor<T>&, const NormResult<T>&,                \
                                                    const Tensor<T>&);                                     \
  template NormResult<T> batch_norm_eval(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                         const BatchNormState<T>&, T);                                     \
  template LinearGrads<T> batch_norm_eval_backward(const Tensor<T>&, const NormResult<T>&,                 \
                                                   const Tensor<T>&);                                      \
  template LossResult<T> softmax_cross_entropy(const Tensor<T>&, std::span<const std::uint32_t>);          \
  template std::vector<std::uint32_t> argmax_rows(const Tensor<T>&);

SHIFTVIT_INSTANTIATE(float)
SHIFTVIT_INSTANTIATE(double)

#undef SHIFTVIT_INSTANTIATE

}  // namespace shiftvit
