#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "shiftvit/blocks.hpp"
#include "shiftvit/config.hpp"
#include "shiftvit/param_store.hpp"
#include "shiftvit/tape.hpp"

namespace shiftvit {

/// Closed-form size, cost and depth of a configuration.
struct ModelFacts {
  std::size_t input_size = 0;

  std::size_t stem_params = 0;
  std::array<std::size_t, 4> merge_params{};  // merge_params[0] is always 0
  std::array<std::size_t, 4> block_params{};  // all blocks of a stage
  std::size_t final_norm_params = 0;
  std::size_t head_params = 0;
  std::size_t total_params = 0;
  std::size_t params_without_head = 0;

  // Multiply-accumulate counts for one image.
  std::uint64_t stem_macs = 0;
  std::array<std::uint64_t, 4> merge_macs{};
  std::array<std::uint64_t, 4> block_macs{};
  std::uint64_t head_macs = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t shift_flops = 0;
  /// Elementwise work outside the MAC count: normalized, activated and
  /// residual-added elements.
  std::uint64_t non_mac_ops = 0;

  std::size_t depth = 0;

  /// Stage s params including its merge (stage 1 includes the stem).
  std::size_t stage_params(std::size_t s) const {
    return block_params[s] + merge_params[s] + (s == 0 ? stem_params : 0);
  }
};

/// Params and MACs (at cfg.input_size unless `input_size` is given).
ModelFacts count_params(const VariantConfig& cfg);
ModelFacts count_flops(const VariantConfig& cfg, std::size_t input_size);

/// Layer depth: three layers (shift, fc1, fc2) per block.
std::size_t depth(const VariantConfig& cfg);

/// Patch partition (4x4 space-to-depth then linear 48 -> C), four stages of
/// shift blocks joined by 2x2 merge convolutions, final norm, pooled linear head.
template <typename T>
class ShiftViT {
 public:
  ShiftViT() = default;

  static ShiftViT build(const VariantConfig& cfg, std::uint64_t seed);

  const VariantConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Running statistics, one per batch-norm layer, keyed by the layer's prefix.
  std::vector<std::pair<std::string, BatchNormState<T>>>& norm_states() { return norm_states_; }
  const std::vector<std::pair<std::string, BatchNormState<T>>>& norm_states() const { return norm_states_; }

  /// `tape` must be bound to params(). x is [N, 3, S, S]; returns [N, K, 1, 1] logits.
  Var forward(Tape<T>& tape, Var x, bool training);

  /// Eval-mode logits without keeping a tape around.
  Tensor<T> logits(const Tensor<T>& x);

  template <typename U>
  ShiftViT<U> cast() const {
    ShiftViT<U> out;
    out.cfg_ = cfg_;
    out.params_ = params_.template cast<U>();
    for (const auto& [name, st] : norm_states_) {
      out.norm_states_.emplace_back(
          name, BatchNormState<U>{st.running_mean.template cast<U>(), st.running_var.template cast<U>(), st.updates});
    }
    return out;
  }

 private:
  template <typename>
  friend class ShiftViT;

  BatchNormState<T>* state_for(const std::string& prefix);

  VariantConfig cfg_;
  ParamStore<T> params_;
  std::vector<std::pair<std::string, BatchNormState<T>>> norm_states_;
};

}  // namespace shiftvit
