#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shiftvit/tensor.hpp"

namespace shiftvit {

// Per-channel vectors (norm gain/bias, running statistics) are stored as [C, 1, 1, 1].

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Forward output plus the per-group statistics the backward pass reuses.
template <typename T>
struct NormResult {
  Tensor<T> out;
  Tensor<T> normalized;    // pre-affine values
  std::vector<T> inv_std;  // one per token (layer norm) or per channel (batch norm)
};

/// Normalizes every (n, h, w) token over its C channels.
template <typename T>
NormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

template <typename T>
LinearGrads<T> layer_norm_backward(const Tensor<T>& grad_out, const NormResult<T>& fwd,
                                   const Tensor<T>& gain);

/// Running statistics of one batch-norm layer. `updates` counts training
/// batches seen; zero means eval mode has nothing to use yet.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  std::uint64_t updates = 0;

  static BatchNormState fresh(std::size_t channels);
  /// Marks externally supplied statistics as usable.
  void seed(Tensor<T> mean, Tensor<T> var);
};

/// Training mode: normalizes each channel over (N, H, W) with the population
/// variance and folds the batch statistics into `state`.
template <typename T>
NormResult<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                               BatchNormState<T>& state, T eps, T momentum);

template <typename T>
LinearGrads<T> batch_norm_train_backward(const Tensor<T>& grad_out, const NormResult<T>& fwd,
                                         const Tensor<T>& gain);

/// Eval mode: throws UninitializedStatsError when the state has never been updated or seeded.
template <typename T>
NormResult<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                              const BatchNormState<T>& state, T eps);

template <typename T>
LinearGrads<T> batch_norm_eval_backward(const Tensor<T>& grad_out, const NormResult<T>& fwd,
                                        const Tensor<T>& gain);

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> grad;  // d loss / d logits, same shape as logits
};

/// Mean negative log-likelihood over the batch. logits are [N, K, 1, 1].
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> labels);

/// Row-wise argmax of [N, K, 1, 1] logits.
template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits);

}  // namespace shiftvit
