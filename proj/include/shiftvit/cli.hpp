#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "shiftvit/config.hpp"

namespace shiftvit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

/// Entry point behind the `shiftvit` binary. `args` excludes the program
/// name. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads a run config: {"variant": "<preset>", "model": {...}, "train": {...}}.
/// An empty path gives the `fallback_variant` preset with desk training defaults.
/// A non-empty `variant_override` replaces the file's preset name.
std::pair<VariantConfig, TrainConfig> load_run_config(const std::string& path, const std::string& variant_override,
                                                      const std::string& fallback_variant = "shift-nano");

/// Per-stage parameter and cost table printed by `params`.
std::string params_table(const VariantConfig& cfg);

}  // namespace shiftvit
