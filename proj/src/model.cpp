#include "shiftvit/model.hpp"

#include "shiftvit/rng.hpp"

namespace shiftvit {

namespace {

constexpr std::size_t kPatch = 4;
constexpr std::size_t kPatchChannels = 3 * kPatch * kPatch;
constexpr std::size_t kLayersPerBlock = 3;

std::string stage_name(std::size_t s) { return "stage" + std::to_string(s + 1); }

std::string block_name(std::size_t s, std::size_t b) { return stage_name(s) + ".block" + std::to_string(b + 1); }

}  // namespace

ModelFacts count_flops(const VariantConfig& cfg, std::size_t input_size) {
  ModelFacts f;
  f.input_size = input_size;
  const std::uint64_t c0 = cfg.base_channels;
  const std::uint64_t tau = cfg.expand_ratio;
  const std::uint64_t k = cfg.num_classes;

  f.stem_params = kPatchChannels * c0 + c0;
  std::uint64_t grid = input_size / kPatch;
  f.stem_macs = grid * grid * kPatchChannels * c0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::uint64_t c = c0 << s;
    if (s > 0) {
      grid /= 2;
      f.merge_params[s] = (c / 2) * 4 * c + c;
      f.merge_macs[s] = grid * grid * (c / 2) * 4 * c;
    }
    const std::uint64_t hw = grid * grid;
    const std::uint64_t per_block = 2 * c * tau * c + tau * c + c + 2 * c;
    f.block_params[s] = cfg.depths[s] * per_block;
    f.block_macs[s] = cfg.depths[s] * hw * 2 * c * tau * c;
    // norm, activation, residual add
    f.non_mac_ops += cfg.depths[s] * hw * (c + tau * c + c);
  }
  const std::uint64_t c_last = c0 << 3;
  f.final_norm_params = 2 * c_last;
  f.non_mac_ops += grid * grid * c_last;
  f.head_params = c_last * k + k;
  f.head_macs = c_last * k;
  f.shift_flops = 0;

  f.params_without_head = f.stem_params + f.final_norm_params;
  f.total_macs = f.stem_macs + f.head_macs;
  for (std::size_t s = 0; s < 4; ++s) {
    f.params_without_head += f.block_params[s] + f.merge_params[s];
    f.total_macs += f.block_macs[s] + f.merge_macs[s];
  }
  f.total_params = f.params_without_head + f.head_params;
  f.depth = depth(cfg);
  return f;
}

ModelFacts count_params(const VariantConfig& cfg) { return count_flops(cfg, cfg.input_size); }

std::size_t depth(const VariantConfig& cfg) { return kLayersPerBlock * cfg.total_blocks(); }

template <typename T>
ShiftViT<T> ShiftViT<T>::build(const VariantConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ShiftViT m;
  m.cfg_ = cfg;
  Rng rng(seed);
  const std::size_t c0 = cfg.base_channels;
  register_linear(m.params_, "stem.proj", kPatchChannels, c0, rng);
  auto add_norm_state = [&](const std::string& prefix, std::size_t channels) {
    if (cfg.norm == NormKind::batchnorm) m.norm_states_.emplace_back(prefix, BatchNormState<T>::fresh(channels));
  };
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t c = cfg.stage_width(s);
    if (s > 0) register_conv(m.params_, stage_name(s) + ".merge", c / 2, c, 2, rng);
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      register_shift_block(m.params_, block_name(s, b), c, cfg.expand_ratio, rng);
      add_norm_state(block_name(s, b) + ".norm", c);
    }
  }
  register_norm(m.params_, "final_norm", cfg.stage_width(3));
  add_norm_state("final_norm", cfg.stage_width(3));
  register_linear(m.params_, "head", cfg.stage_width(3), cfg.num_classes, rng);
  return m;
}

template <typename T>
BatchNormState<T>* ShiftViT<T>::state_for(const std::string& prefix) {
  if (cfg_.norm != NormKind::batchnorm) return nullptr;
  for (auto& [name, st] : norm_states_)
    if (name == prefix) return &st;
  throw ContractError("no batch-norm state for '" + prefix + "'");
}

template <typename T>
Var ShiftViT<T>::forward(Tape<T>& tape, Var x, bool training) {
  if (tape.params() != &params_) throw ContractError("forward: tape is not bound to this model's parameters");
  const Shape& in = tape.value(x).shape();
  if (in.c() != 3 || in.h() != cfg_.input_size || in.w() != cfg_.input_size) {
    throw DimensionError("forward: expected input [N,3," + std::to_string(cfg_.input_size) + "," +
                         std::to_string(cfg_.input_size) + "], got " + in.str());
  }
  if (in.n() == 0) {
    return tape.input(Tensor<T>(Shape(0, cfg_.num_classes, 1, 1)));
  }
  BlockOptions opt{cfg_.shift_spec(), cfg_.norm, cfg_.act, training};
  Var h = linear_layer(tape, ad::space_to_depth(tape, x, kPatch), std::string("stem.proj"));
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) {
      const std::string p = stage_name(s) + ".merge";
      h = ad::conv(tape, h, tape.param(p + ".weight"), tape.param(p + ".bias"), 2);
    }
    for (std::size_t b = 0; b < cfg_.depths[s]; ++b) {
      const std::string p = block_name(s, b);
      h = shift_block(tape, h, p, opt, state_for(p + ".norm"));
    }
  }
  h = norm_layer(tape, h, std::string("final_norm"), cfg_.norm, state_for("final_norm"), training);
  return classifier_head(tape, h, std::string("head"));
}

template <typename T>
Tensor<T> ShiftViT<T>::logits(const Tensor<T>& x) {
  Tape<T> tape(&params_);
  const Var out = forward(tape, tape.input(x), false);
  return tape.value(out);
}

template class ShiftViT<float>;
template class ShiftViT<double>;

}  // namespace shiftvit
