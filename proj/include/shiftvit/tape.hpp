#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shiftvit/layers.hpp"
#include "shiftvit/param_store.hpp"
#include "shiftvit/shift.hpp"
#include "shiftvit/tensor.hpp"

namespace shiftvit {

enum class OpKind {
  input,
  param,
  linear,
  conv,
  space_to_depth,
  avg_pool,
  add,
  scale,
  relu,
  gelu,
  gelu_tanh,
  shift,
  layer_norm,
  batch_norm_train,
  batch_norm_eval,
  cross_entropy,
  weighted_sum,
  sum,
};

const char* op_name(OpKind kind);

/// Handle to one tape record.
struct Var {
  static constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::size_t id = none;
};

/// Result of a backward pass. `params` mirrors the tape's ParamStore (same
/// names and order), zero where a parameter was not reached.
template <typename T>
struct Gradients {
  ParamStore<T> params;
  std::vector<std::pair<std::size_t, Tensor<T>>> inputs;  // keyed by Var id of input leaves

  const Tensor<T>& param(const std::string& name) const { return params.get(name); }
  const Tensor<T>& input(Var v) const;
};

/// Linear record of one forward pass. Every op call appends exactly one
/// record; backward replays them in reverse.
template <typename T>
class Tape {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(ParamStore<T>* params = nullptr) : params_(params) {}

  Var input(Tensor<T> value);
  /// Leaf bound to a stored parameter (no copy).
  Var param(const std::string& name);
  Var param(std::size_t index);

  Var push(OpKind kind, Tensor<T> value, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  std::size_t size() const { return records_.size(); }
  OpKind kind(std::size_t record) const { return records_[record].kind; }
  ParamStore<T>* params() const { return params_; }

  /// Adds `grad` into the running gradient of `v` (used by backward rules).
  void accumulate(Var v, const Tensor<T>& grad);

  /// Reverse pass from a scalar. Throws ContractError for an empty tape or a
  /// loss with more than one element.
  Gradients<T> backward(Var loss, T seed = T(1));

 private:
  struct Record {
    OpKind kind;
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    std::size_t param_index = Var::none;
    BackwardFn backward;
  };

  ParamStore<T>* params_;
  std::vector<Record> records_;
  std::vector<Tensor<T>> grads_;
  std::vector<bool> reached_;
};

namespace ad {

template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias);

template <typename T>
Var conv(Tape<T>& tape, Var x, Var weight, Var bias, std::size_t k);

template <typename T>
Var space_to_depth(Tape<T>& tape, Var x, std::size_t k);

template <typename T>
Var avg_pool(Tape<T>& tape, Var x);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var a, T s);

template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
Var gelu(Tape<T>& tape, Var x);

template <typename T>
Var gelu_tanh(Tape<T>& tape, Var x);

template <typename T>
Var shift(Tape<T>& tape, Var x, const ShiftSpec& spec);

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, T eps);

/// Training mode updates `state`; eval mode reads it.
template <typename T>
Var batch_norm(Tape<T>& tape, Var x, Var gain, Var bias, BatchNormState<T>& state, bool training, T eps,
               T momentum);

/// Scalar mean cross-entropy of [N, K, 1, 1] logits.
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const std::uint32_t> labels);

/// Scalar <x, weights> with constant weights.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights);

template <typename T>
Var sum(Tape<T>& tape, Var x);

}  // namespace ad

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x.
Tensor<double> finite_diff(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                           double h = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-8); 0 for empty tensors.
double max_rel_error(const Tensor<double>& a, const Tensor<double>& b);

}  // namespace shiftvit
