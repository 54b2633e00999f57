#pragma once

#include <string>

#include "shiftvit/config.hpp"
#include "shiftvit/layers.hpp"
#include "shiftvit/param_store.hpp"
#include "shiftvit/rng.hpp"
#include "shiftvit/tape.hpp"

namespace shiftvit {

// Parameter registration. Weights draw from a truncated normal (std 0.02,
// cut at two std), biases start at 0, norm gains at 1.

inline constexpr double kInitStd = 0.02;

template <typename T>
void register_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

/// Non-overlapping k x k convolution weight [out, in, k, k] plus bias.
template <typename T>
void register_conv(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                   std::size_t k, Rng& rng);

template <typename T>
void register_norm(ParamStore<T>& store, const std::string& prefix, std::size_t channels);

/// prefix.norm.*, prefix.mlp.fc1.*, prefix.mlp.fc2.*
template <typename T>
void register_shift_block(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t tau,
                          Rng& rng);

// Tape-level layers. The tape must be bound to the store holding `prefix.*`.

template <typename T>
Var linear_layer(Tape<T>& tape, Var x, const std::string& prefix);

template <typename T>
Var activation(Tape<T>& tape, Var x, ActKind act);

/// `bn_state` is required for batch norm and ignored for layer norm.
template <typename T>
Var norm_layer(Tape<T>& tape, Var x, const std::string& prefix, NormKind kind, BatchNormState<T>* bn_state,
               bool training);

/// fc2(act(fc1(x))) with fc1: C -> tau*C and fc2: tau*C -> C.
template <typename T>
Var mlp(Tape<T>& tape, Var x, const std::string& prefix, ActKind act);

struct BlockOptions {
  ShiftSpec shift;
  NormKind norm = NormKind::layernorm;
  ActKind act = ActKind::gelu;
  bool training = true;
};

/// x' = shift(x); x' + mlp(norm(x')).
template <typename T>
Var shift_block(Tape<T>& tape, Var x, const std::string& prefix, const BlockOptions& opt,
                BatchNormState<T>* bn_state = nullptr);

/// linear(global_avg_pool(x)) giving [N, K, 1, 1] logits.
template <typename T>
Var classifier_head(Tape<T>& tape, Var x, const std::string& prefix);

}  // namespace shiftvit
