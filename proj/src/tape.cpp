#include "shiftvit/tape.hpp"

#include <algorithm>
#include <cmath>

namespace shiftvit {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::param: return "param";
    case OpKind::linear: return "linear";
    case OpKind::conv: return "conv";
    case OpKind::space_to_depth: return "space_to_depth";
    case OpKind::avg_pool: return "avg_pool";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::relu: return "relu";
    case OpKind::gelu: return "gelu";
    case OpKind::gelu_tanh: return "gelu_tanh";
    case OpKind::shift: return "shift";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::batch_norm_train: return "batch_norm_train";
    case OpKind::batch_norm_eval: return "batch_norm_eval";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::weighted_sum: return "weighted_sum";
    case OpKind::sum: return "sum";
  }
  return "?";
}

template <typename T>
const Tensor<T>& Gradients<T>::input(Var v) const {
  for (const auto& [id, g] : inputs)
    if (id == v.id) return g;
  throw ContractError("no gradient recorded for input var " + std::to_string(v.id));
}

template <typename T>
Var Tape<T>::input(Tensor<T> value) {
  records_.push_back(Record{OpKind::input, std::move(value), nullptr, Var::none, {}});
  return Var{records_.size() - 1};
}

template <typename T>
Var Tape<T>::param(const std::string& name) {
  if (params_ == nullptr) throw ContractError("tape has no parameter store");
  return param(params_->index_of(name));
}

template <typename T>
Var Tape<T>::param(std::size_t index) {
  if (params_ == nullptr || index >= params_->size()) throw ContractError("parameter index out of range");
  records_.push_back(Record{OpKind::param, {}, &(*params_)[index].value, index, {}});
  return Var{records_.size() - 1};
}

template <typename T>
Var Tape<T>::push(OpKind kind, Tensor<T> value, BackwardFn backward) {
  records_.push_back(Record{kind, std::move(value), nullptr, Var::none, std::move(backward)});
  return Var{records_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  if (v.id >= records_.size()) throw ContractError("var " + std::to_string(v.id) + " is not on this tape");
  const Record& r = records_[v.id];
  return r.ref != nullptr ? *r.ref : r.owned;
}

template <typename T>
void Tape<T>::accumulate(Var v, const Tensor<T>& grad) {
  require_same_shape(grad.shape(), value(v).shape(), op_name(records_[v.id].kind));
  if (!reached_[v.id]) {
    grads_[v.id] = grad;
    reached_[v.id] = true;
    return;
  }
  auto dst = grads_[v.id].data();
  auto src = grad.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Gradients<T> Tape<T>::backward(Var loss, T seed) {
  if (records_.empty()) throw ContractError("backward on an empty tape");
  if (value(loss).numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + value(loss).shape().str());
  }
  grads_.assign(records_.size(), Tensor<T>());
  reached_.assign(records_.size(), false);
  grads_[loss.id] = Tensor<T>(value(loss).shape(), seed);
  reached_[loss.id] = true;
  for (std::size_t i = records_.size(); i-- > 0;) {
    Record& r = records_[i];
    if (!r.backward || !reached_[i]) continue;
    r.backward(*this, grads_[i]);
  }
  Gradients<T> out;
  if (params_ != nullptr) {
    for (const auto& e : *params_) out.params.add(e.name, Tensor<T>(e.value.shape()));
  }
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const Record& r = records_[i];
    if (r.kind == OpKind::param && reached_[i]) {
      Tensor<T>& dst = out.params[r.param_index].value;
      for (std::size_t j = 0; j < dst.numel(); ++j) dst[j] += grads_[i][j];
    } else if (r.kind == OpKind::input) {
      out.inputs.emplace_back(i, reached_[i] ? std::move(grads_[i]) : Tensor<T>(r.owned.shape()));
    }
  }
  grads_.clear();
  reached_.clear();
  return out;
}

namespace ad {

template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  Tensor<T> out = matmul_channels(tape.value(x), tape.value(weight), tape.value(bias));
  return tape.push(OpKind::linear, std::move(out), [x, weight, bias](Tape<T>& t, const Tensor<T>& g) {
    auto grads = matmul_channels_backward(g, t.value(x), t.value(weight));
    t.accumulate(x, grads.input);
    t.accumulate(weight, grads.weight);
    t.accumulate(bias, grads.bias);
  });
}

template <typename T>
Var conv(Tape<T>& tape, Var x, Var weight, Var bias, std::size_t k) {
  Tensor<T> out = conv2d_nonoverlap(tape.value(x), tape.value(weight), tape.value(bias), k);
  return tape.push(OpKind::conv, std::move(out), [x, weight, bias, k](Tape<T>& t, const Tensor<T>& g) {
    auto grads = conv2d_nonoverlap_backward(g, t.value(x), t.value(weight), k);
    t.accumulate(x, grads.input);
    t.accumulate(weight, grads.weight);
    t.accumulate(bias, grads.bias);
  });
}

template <typename T>
Var space_to_depth(Tape<T>& tape, Var x, std::size_t k) {
  return tape.push(OpKind::space_to_depth, shiftvit::space_to_depth(tape.value(x), k),
                   [x, k](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x, depth_to_space(g, k)); });
}

template <typename T>
Var avg_pool(Tape<T>& tape, Var x) {
  return tape.push(OpKind::avg_pool, global_avg_pool(tape.value(x)), [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, global_avg_pool_backward(g, t.value(x).shape()));
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  return tape.push(OpKind::add, shiftvit::add(tape.value(a), tape.value(b)),
                   [a, b](Tape<T>& t, const Tensor<T>& g) {
                     t.accumulate(a, g);
                     t.accumulate(b, g);
                   });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T s) {
  return tape.push(OpKind::scale, shiftvit::scale(tape.value(a), s),
                   [a, s](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a, shiftvit::scale(g, s)); });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  return tape.push(OpKind::relu, shiftvit::relu(tape.value(x)),
                   [x](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x, relu_backward(g, t.value(x))); });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
  return tape.push(OpKind::gelu, shiftvit::gelu(tape.value(x)),
                   [x](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x, gelu_backward(g, t.value(x))); });
}

template <typename T>
Var gelu_tanh(Tape<T>& tape, Var x) {
  return tape.push(OpKind::gelu_tanh, shiftvit::gelu_tanh(tape.value(x)), [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, gelu_tanh_backward(g, t.value(x)));
  });
}

template <typename T>
Var shift(Tape<T>& tape, Var x, const ShiftSpec& spec) {
  return tape.push(OpKind::shift, shift_forward(tape.value(x), spec),
                   [x, spec](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x, shift_backward(g, spec)); });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, T eps) {
  NormResult<T> r = shiftvit::layer_norm(tape.value(x), tape.value(gain), tape.value(bias), eps);
  Tensor<T> out = std::move(r.out);
  r.out = Tensor<T>();
  return tape.push(OpKind::layer_norm, std::move(out),
                   [x, gain, bias, r = std::move(r)](Tape<T>& t, const Tensor<T>& g) {
                     auto grads = layer_norm_backward(g, r, t.value(gain));
                     t.accumulate(x, grads.input);
                     t.accumulate(gain, grads.weight);
                     t.accumulate(bias, grads.bias);
                   });
}

template <typename T>
Var batch_norm(Tape<T>& tape, Var x, Var gain, Var bias, BatchNormState<T>& state, bool training, T eps,
               T momentum) {
  NormResult<T> r = training ? batch_norm_train(tape.value(x), tape.value(gain), tape.value(bias), state, eps, momentum)
                             : batch_norm_eval(tape.value(x), tape.value(gain), tape.value(bias), state, eps);
  Tensor<T> out = std::move(r.out);
  r.out = Tensor<T>();
  return tape.push(training ? OpKind::batch_norm_train : OpKind::batch_norm_eval, std::move(out),
                   [x, gain, bias, training, r = std::move(r)](Tape<T>& t, const Tensor<T>& g) {
                     auto grads = training ? batch_norm_train_backward(g, r, t.value(gain))
                                           : batch_norm_eval_backward(g, r, t.value(gain));
                     t.accumulate(x, grads.input);
                     t.accumulate(gain, grads.weight);
                     t.accumulate(bias, grads.bias);
                   });
}

template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const std::uint32_t> labels) {
  LossResult<T> r = softmax_cross_entropy(tape.value(logits), labels);
  return tape.push(OpKind::cross_entropy, Tensor<T>(Shape(1, 1, 1, 1), r.loss),
                   [logits, dl = std::move(r.grad)](Tape<T>& t, const Tensor<T>& g) {
                     t.accumulate(logits, shiftvit::scale(dl, g[0]));
                   });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights) {
  const T v = dot(tape.value(x), weights);
  return tape.push(OpKind::weighted_sum, Tensor<T>(Shape(1, 1, 1, 1), v),
                   [x, weights](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x, shiftvit::scale(weights, g[0])); });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const T v = shiftvit::sum(tape.value(x));
  return tape.push(OpKind::sum, Tensor<T>(Shape(1, 1, 1, 1), v), [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, Tensor<T>(t.value(x).shape(), g[0]));
  });
}

}  // namespace ad

Tensor<double> finite_diff(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                           double h) {
  if (!(h > 0)) throw ContractError("finite_diff: step must be positive");
  Tensor<double> probe = x;
  Tensor<double> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

double max_rel_error(const Tensor<double>& a, const Tensor<double>& b) {
  require_same_shape(a.shape(), b.shape(), "max_rel_error");
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

#define SHIFTVIT_INSTANTIATE(T)                                                                        \
  template struct Gradients<T>;                                                                        \
  template class Tape<T>;                                                                              \
  template Var ad::linear(Tape<T>&, Var, Var, Var);                                                    \
  template Var ad::conv(Tape<T>&, Var, Var, Var, std::size_t);                                         \
  template Var ad::space_to_depth(Tape<T>&, Var, std::size_t);                                         \
  template Var ad::avg_pool(Tape<T>&, Var);                                                            \
  template Var ad::add(Tape<T>&, Var, Var);                                                            \
  template Var ad::scale(Tape<T>&, Var, T);                                                            \
  template Var ad::relu(Tape<T>&, Var);                                                                \
  template Var ad::gelu(Tape<T>&, Var);                                                                \
  template Var ad::gelu_tanh(Tape<T>&, Var);                                                           \
  template Var ad::shift(Tape<T>&, Var, const ShiftSpec&);                                             \
  template Var ad::layer_norm(Tape<T>&, Var, Var, Var, T);                                             \
  template Var ad::batch_norm(Tape<T>&, Var, Var, Var, BatchNormState<T>&, bool, T, T);                \
  template Var ad::cross_entropy(Tape<T>&, Var, std::span<const std::uint32_t>);                      \
  template Var ad::weighted_sum(Tape<T>&, Var, const Tensor<T>&);                                      \
  template Var ad::sum(Tape<T>&, Var);

SHIFTVIT_INSTANTIATE(float)
SHIFTVIT_INSTANTIATE(double)

#undef SHIFTVIT_INSTANTIATE

}  // namespace shiftvit
