#include "shiftvit/config.hpp"

#include <algorithm>
#include <set>

namespace shiftvit {

using nlohmann::json;

const char* to_string(NormKind k) { return k == NormKind::layernorm ? "layernorm" : "batchnorm"; }

const char* to_string(ActKind k) {
  switch (k) {
    case ActKind::gelu: return "gelu";
    case ActKind::gelu_tanh: return "gelu_tanh";
    case ActKind::relu: return "relu";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view s) {
  if (s == "layernorm" || s == "ln") return NormKind::layernorm;
  if (s == "batchnorm" || s == "bn") return NormKind::batchnorm;
  throw ConfigError("unknown norm kind '" + std::string(s) + "' (layernorm | batchnorm)");
}

ActKind parse_act_kind(std::string_view s) {
  if (s == "gelu") return ActKind::gelu;
  if (s == "gelu_tanh") return ActKind::gelu_tanh;
  if (s == "relu") return ActKind::relu;
  throw ConfigError("unknown activation '" + std::string(s) + "' (gelu | gelu_tanh | relu)");
}

void VariantConfig::validate() const {
  std::vector<std::string> problems;
  if (base_channels == 0) problems.emplace_back("base_channels must be >= 1");
  if (expand_ratio == 0) problems.emplace_back("expand_ratio must be >= 1");
  if (num_classes == 0) problems.emplace_back("num_classes must be >= 1");
  if (input_size == 0 || input_size % 32 != 0) {
    problems.push_back("input_size " + std::to_string(input_size) + " must be a positive multiple of 32");
  }
  if (gamma.den <= 0 || gamma.num < 0 || gamma.num * 4 > gamma.den) {
    problems.push_back("gamma " + gamma.str() + " must lie in [0, 1/4]");
  } else {
    for (std::size_t s = 0; s < 4 && base_channels > 0; ++s) {
      if (!shift_spec().valid_for(stage_width(s))) {
        problems.push_back("gamma " + gamma.str() + " invalid for stage " + std::to_string(s + 1) + " width " +
                           std::to_string(stage_width(s)));
      }
    }
  }
  if (problems.empty()) return;
  std::string msg = "invalid model config '" + name + "':";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

namespace {

VariantConfig make_variant(std::string name, std::size_t c, std::array<std::size_t, 4> depths, Ratio gamma,
                           std::size_t tau = 2) {
  VariantConfig v;
  v.name = std::move(name);
  v.base_channels = c;
  v.depths = depths;
  v.gamma = gamma;
  v.expand_ratio = tau;
  return v;
}

std::vector<VariantConfig> all_variants() {
  VariantConfig nano = make_variant("shift-nano", 16, {1, 1, 2, 1}, Ratio{1, 8});
  nano.num_classes = 4;
  nano.input_size = 32;
  return {
      make_variant("shift-t", 96, {6, 8, 18, 6}, Ratio{1, 12}),
      make_variant("shift-s", 96, {10, 18, 36, 10}, Ratio{1, 12}),
      make_variant("shift-b", 128, {10, 18, 36, 10}, Ratio{1, 16}),
      nano,
      make_variant("shift-t-tau1", 96, {11, 16, 36, 12}, Ratio{1, 12}, 1),
      make_variant("shift-t-tau2", 96, {6, 8, 18, 6}, Ratio{1, 12}, 2),
      make_variant("shift-t-tau3", 96, {4, 5, 12, 4}, Ratio{1, 12}, 3),
      make_variant("shift-t-tau4", 96, {3, 4, 9, 3}, Ratio{1, 12}, 4),
  };
}

Ratio ratio_from_json(const json& v) {
  if (v.is_string()) return Ratio::parse(v.get<std::string>());
  if (v.is_number()) return Ratio::from_double(v.get<double>());
  throw ConfigError("gamma must be a number or an \"a/b\" string");
}

template <typename F>
void strict_keys(const json& j, const std::set<std::string>& allowed, const char* what, F&& handle) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (allowed.count(it.key()) == 0) {
      std::string keys;
      for (const auto& k : allowed) keys += (keys.empty() ? "" : ", ") + k;
      throw ConfigError(std::string("unknown ") + what + " config key '" + it.key() + "' (allowed: " + keys + ")");
    }
    try {
      handle(it.key(), it.value());
    } catch (const json::exception& e) {
      throw ConfigError(std::string(what) + " config key '" + it.key() + "': " + e.what());
    }
  }
}

}  // namespace

std::optional<VariantConfig> variant_preset(std::string_view name) {
  for (auto& v : all_variants())
    if (v.name == name) return v;
  return std::nullopt;
}

std::vector<std::string> variant_preset_names() {
  std::vector<std::string> names;
  for (const auto& v : all_variants()) names.push_back(v.name);
  return names;
}

VariantConfig variant_from_json(const json& j, VariantConfig base) {
  static const std::set<std::string> keys{"name",  "base_channels", "depths", "expand_ratio", "gamma",
                                          "shift_step", "norm", "act", "num_classes", "input_size"};
  strict_keys(j, keys, "model", [&](const std::string& k, const json& v) {
    if (k == "name") base.name = v.get<std::string>();
    else if (k == "base_channels") base.base_channels = v.get<std::size_t>();
    else if (k == "depths") {
      auto d = v.get<std::vector<std::size_t>>();
      if (d.size() != 4) throw ConfigError("depths must list exactly 4 stages");
      std::copy(d.begin(), d.end(), base.depths.begin());
    } else if (k == "expand_ratio") base.expand_ratio = v.get<std::size_t>();
    else if (k == "gamma") base.gamma = ratio_from_json(v);
    else if (k == "shift_step") base.shift_step = v.get<std::size_t>();
    else if (k == "norm") base.norm = parse_norm_kind(v.get<std::string>());
    else if (k == "act") base.act = parse_act_kind(v.get<std::string>());
    else if (k == "num_classes") base.num_classes = v.get<std::size_t>();
    else if (k == "input_size") base.input_size = v.get<std::size_t>();
  });
  return base;
}

json to_json(const VariantConfig& c) {
  return json{{"name", c.name},
              {"base_channels", c.base_channels},
              {"depths", c.depths},
              {"expand_ratio", c.expand_ratio},
              {"gamma", c.gamma.str()},
              {"shift_step", c.shift_step},
              {"norm", to_string(c.norm)},
              {"act", to_string(c.act)},
              {"num_classes", c.num_classes},
              {"input_size", c.input_size}};
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::adamw ? "adamw" : "sgd"; }
const char* to_string(ScheduleKind k) { return k == ScheduleKind::cosine ? "cosine" : "constant"; }

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(base_lr > 0)) problems.emplace_back("base_lr must be > 0");
  if (epochs < 1) problems.emplace_back("epochs must be >= 1");
  if (batch_size < 1) problems.emplace_back("batch_size must be >= 1");
  if (weight_decay < 0) problems.emplace_back("weight_decay must be >= 0");
  if (momentum < 0 || momentum >= 1) problems.emplace_back("momentum must lie in [0, 1)");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) problems.emplace_back("betas must lie in [0, 1)");
  if (!(adam_eps > 0)) problems.emplace_back("adam_eps must be > 0");
  if (num_classes < 1) problems.emplace_back("num_classes must be >= 1");
  if (problems.empty()) return;
  std::string msg = "invalid train config:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

std::optional<TrainConfig> train_preset(std::string_view name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.batch_size = 1024;
    c.epochs = 300;
    c.warmup_epochs = 20;
    c.num_classes = 1000;
    return c;
  }
  if (name == "cnn") {
    c.optimizer = OptimizerKind::sgd;
    c.base_lr = 0.1;
    c.momentum = 0.9;
    c.weight_decay = 1e-4;
    return c;
  }
  return std::nullopt;
}

std::vector<std::string> train_preset_names() { return {"desk", "paper", "cnn"}; }

TrainConfig train_from_json(const json& j, TrainConfig base) {
  static const std::set<std::string> keys{"optimizer", "base_lr",    "weight_decay",  "momentum", "betas",
                                          "adam_eps",  "epochs",     "batch_size",    "schedule", "warmup_epochs",
                                          "seed",      "num_classes", "hflip",        "preset"};
  if (j.is_object() && j.contains("preset")) {
    const auto name = j.at("preset").get<std::string>();
    auto p = train_preset(name);
    if (!p) throw ConfigError("unknown train preset '" + name + "'");
    base = *p;
  }
  strict_keys(j, keys, "train", [&](const std::string& k, const json& v) {
    if (k == "optimizer") {
      const auto s = v.get<std::string>();
      if (s == "adamw") base.optimizer = OptimizerKind::adamw;
      else if (s == "sgd") base.optimizer = OptimizerKind::sgd;
      else throw ConfigError("unknown optimizer '" + s + "' (adamw | sgd)");
    } else if (k == "base_lr") base.base_lr = v.get<double>();
    else if (k == "weight_decay") base.weight_decay = v.get<double>();
    else if (k == "momentum") base.momentum = v.get<double>();
    else if (k == "betas") {
      auto b = v.get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("betas must have two entries");
      base.beta1 = b[0];
      base.beta2 = b[1];
    } else if (k == "adam_eps") base.adam_eps = v.get<double>();
    else if (k == "epochs") base.epochs = v.get<std::size_t>();
    else if (k == "batch_size") base.batch_size = v.get<std::size_t>();
    else if (k == "schedule") {
      const auto s = v.get<std::string>();
      if (s == "cosine") base.schedule = ScheduleKind::cosine;
      else if (s == "constant") base.schedule = ScheduleKind::constant;
      else throw ConfigError("unknown schedule '" + s + "' (cosine | constant)");
    } else if (k == "warmup_epochs") base.warmup_epochs = v.get<std::size_t>();
    else if (k == "seed") base.seed = v.get<std::uint64_t>();
    else if (k == "num_classes") base.num_classes = v.get<std::size_t>();
    else if (k == "hflip") base.hflip = v.get<bool>();
  });
  return base;
}

json to_json(const TrainConfig& c) {
  return json{{"optimizer", to_string(c.optimizer)},
              {"base_lr", c.base_lr},
              {"weight_decay", c.weight_decay},
              {"momentum", c.momentum},
              {"betas", {c.beta1, c.beta2}},
              {"adam_eps", c.adam_eps},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"schedule", to_string(c.schedule)},
              {"warmup_epochs", c.warmup_epochs},
              {"seed", c.seed},
              {"num_classes", c.num_classes},
              {"hflip", c.hflip}};
}

std::string AblationArm::label() const {
  return std::string(to_string(optimizer)) + "/" + to_string(act) + "/" + (norm == NormKind::layernorm ? "ln" : "bn") +
         "/" + (long_schedule ? "long" : "short");
}

void apply_arm(const AblationArm& arm, std::size_t long_epochs, VariantConfig& model, TrainConfig& train) {
  model.act = arm.act;
  model.norm = arm.norm;
  train.optimizer = arm.optimizer;
  if (arm.optimizer == OptimizerKind::sgd) {
    const TrainConfig cnn = *train_preset("cnn");
    train.base_lr = cnn.base_lr;
    train.momentum = cnn.momentum;
    train.weight_decay = cnn.weight_decay;
  }
  train.epochs = arm.long_schedule ? long_epochs : std::max<std::size_t>(1, long_epochs / 3);
  train.warmup_epochs = std::min(train.warmup_epochs, train.epochs - 1);
}

}  // namespace shiftvit
