#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shiftvit/shift.hpp"

namespace shiftvit {

enum class NormKind { layernorm, batchnorm };
enum class ActKind { gelu, gelu_tanh, relu };

const char* to_string(NormKind k);
const char* to_string(ActKind k);
NormKind parse_norm_kind(std::string_view s);
ActKind parse_act_kind(std::string_view s);

struct VariantConfig {
  std::string name = "custom";
  std::size_t base_channels = 96;
  std::array<std::size_t, 4> depths{6, 8, 18, 6};
  std::size_t expand_ratio = 2;
  Ratio gamma{1, 12};
  std::size_t shift_step = 1;
  NormKind norm = NormKind::layernorm;
  ActKind act = ActKind::gelu;
  std::size_t num_classes = 1000;
  std::size_t input_size = 224;

  std::size_t stage_width(std::size_t stage) const { return base_channels << stage; }
  std::size_t stage_grid(std::size_t stage) const { return input_size / (4u << stage); }
  ShiftSpec shift_spec() const { return ShiftSpec{gamma, shift_step}; }
  std::size_t total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }

  /// Throws ConfigError naming every violated invariant.
  void validate() const;

  friend bool operator==(const VariantConfig&, const VariantConfig&) = default;
};

/// Named presets: shift-t, shift-s, shift-b, shift-nano, and the matched
/// expand-ratio family tau1..tau4 built on Shift-T widths.
std::optional<VariantConfig> variant_preset(std::string_view name);
std::vector<std::string> variant_preset_names();

/// Keys match the VariantConfig field names; unknown keys are errors. Fields
/// absent from `j` keep their value from `base`.
VariantConfig variant_from_json(const nlohmann::json& j, VariantConfig base = {});
nlohmann::json to_json(const VariantConfig& c);

enum class OptimizerKind { adamw, sgd };
enum class ScheduleKind { cosine, constant };

const char* to_string(OptimizerKind k);
const char* to_string(ScheduleKind k);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adamw;
  double base_lr = 1e-3;
  double weight_decay = 0.05;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  ScheduleKind schedule = ScheduleKind::cosine;
  std::size_t warmup_epochs = 1;
  std::uint64_t seed = 0;
  std::size_t num_classes = 4;
  bool hflip = false;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// "desk" (defaults), "paper" (batch 1024, 300 epochs), "cnn" (SGD arm).
std::optional<TrainConfig> train_preset(std::string_view name);
std::vector<std::string> train_preset_names();

TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const TrainConfig& c);

/// Table-5 style toggles layered over a base pair of configs.
struct AblationArm {
  OptimizerKind optimizer;
  ActKind act;
  NormKind norm;
  bool long_schedule;

  std::string label() const;
};

/// SGD arms take the CNN hyperparameters (lr, momentum, weight decay); the
/// short schedule runs a third of `long_epochs`.
void apply_arm(const AblationArm& arm, std::size_t long_epochs, VariantConfig& model, TrainConfig& train);

}  // namespace shiftvit
