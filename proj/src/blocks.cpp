#include "shiftvit/blocks.hpp"

namespace shiftvit {

namespace {

template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(kInitStd));
  return t;
}

}  // namespace

template <typename T>
void register_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  store.add(prefix + ".weight", trunc_normal<T>(Shape(out, in, 1, 1), rng));
  store.add(prefix + ".bias", Tensor<T>(Shape(out, 1, 1, 1)));
}

template <typename T>
void register_conv(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                   std::size_t k, Rng& rng) {
  store.add(prefix + ".weight", trunc_normal<T>(Shape(out, in, k, k), rng));
  store.add(prefix + ".bias", Tensor<T>(Shape(out, 1, 1, 1)));
}

template <typename T>
void register_norm(ParamStore<T>& store, const std::string& prefix, std::size_t channels) {
  store.add(prefix + ".weight", Tensor<T>(Shape(channels, 1, 1, 1), T(1)));
  store.add(prefix + ".bias", Tensor<T>(Shape(channels, 1, 1, 1)));
}

template <typename T>
void register_shift_block(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t tau,
                          Rng& rng) {
  register_norm(store, prefix + ".norm", channels);
  register_linear(store, prefix + ".mlp.fc1", channels, tau * channels, rng);
  register_linear(store, prefix + ".mlp.fc2", tau * channels, channels, rng);
}

template <typename T>
Var linear_layer(Tape<T>& tape, Var x, const std::string& prefix) {
  return ad::linear(tape, x, tape.param(prefix + ".weight"), tape.param(prefix + ".bias"));
}

template <typename T>
Var activation(Tape<T>& tape, Var x, ActKind act) {
  switch (act) {
    case ActKind::gelu: return ad::gelu(tape, x);
    case ActKind::gelu_tanh: return ad::gelu_tanh(tape, x);
    case ActKind::relu: return ad::relu(tape, x);
  }
  throw ConfigError("unknown activation");
}

template <typename T>
Var norm_layer(Tape<T>& tape, Var x, const std::string& prefix, NormKind kind, BatchNormState<T>* bn_state,
               bool training) {
  const Var gain = tape.param(prefix + ".weight");
  const Var bias = tape.param(prefix + ".bias");
  if (kind == NormKind::layernorm) return ad::layer_norm(tape, x, gain, bias, static_cast<T>(kLayerNormEps));
  if (bn_state == nullptr) throw ContractError("batch norm '" + prefix + "' has no running-stat state");
  return ad::batch_norm(tape, x, gain, bias, *bn_state, training, static_cast<T>(kBatchNormEps),
                        static_cast<T>(kBatchNormMomentum));
}

template <typename T>
Var mlp(Tape<T>& tape, Var x, const std::string& prefix, ActKind act) {
  const Var hidden = activation(tape, linear_layer(tape, x, prefix + ".fc1"), act);
  return linear_layer(tape, hidden, prefix + ".fc2");
}

template <typename T>
Var shift_block(Tape<T>& tape, Var x, const std::string& prefix, const BlockOptions& opt,
                BatchNormState<T>* bn_state) {
  const Var shifted = ad::shift(tape, x, opt.shift);
  const Var normed = norm_layer(tape, shifted, prefix + ".norm", opt.norm, bn_state, opt.training);
  return ad::add(tape, shifted, mlp(tape, normed, prefix + ".mlp", opt.act));
}

template <typename T>
Var classifier_head(Tape<T>& tape, Var x, const std::string& prefix) {
  return linear_layer(tape, ad::avg_pool(tape, x), prefix);
}

#define SHIFTVIT_INSTANTIATE(T)                                                                            \
  template void register_linear(ParamStore<T>&, const std::string&, std::size_t, std::size_t, Rng&);        \
  template void register_conv(ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::size_t,    \
                              Rng&);                                                                       \
  template void register_norm(ParamStore<T>&, const std::string&, std::size_t);                            \
  template void register_shift_block(ParamStore<T>&, const std::string&, std::size_t, std::size_t, Rng&);  \
  template Var linear_layer(Tape<T>&, Var, const std::string&);                                            \
  template Var activation(Tape<T>&, Var, ActKind);                                                         \
  template Var norm_layer(Tape<T>&, Var, const std::string&, NormKind, BatchNormState<T>*, bool);          \
  template Var mlp(Tape<T>&, Var, const std::string&, ActKind);                                            \
  template Var shift_block(Tape<T>&, Var, const std::string&, const BlockOptions&, BatchNormState<T>*);    \
  template Var classifier_head(Tape<T>&, Var, const std::string&);

SHIFTVIT_INSTANTIATE(float)
SHIFTVIT_INSTANTIATE(double)

#undef SHIFTVIT_INSTANTIATE

}  // namespace shiftvit
