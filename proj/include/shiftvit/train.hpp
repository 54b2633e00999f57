#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shiftvit/config.hpp"
#include "shiftvit/data.hpp"
#include "shiftvit/model.hpp"
#include "shiftvit/param_store.hpp"
#include "shiftvit/rng.hpp"

namespace shiftvit {

/// Moment buffers. AdamW uses `first` (m) and `second` (v); SGD keeps its
/// velocity in `first` and leaves `second` empty.
template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adamw;
  std::uint64_t steps = 0;
  ParamStore<T> first;
  ParamStore<T> second;

  static OptimizerState init(OptimizerKind kind, const ParamStore<T>& params);

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Decoupled weight decay p -= lr*wd*p, then the bias-corrected Adam update.
/// Throws NonFiniteError naming the parameter if any gradient is NaN or infinite.
template <typename T>
void adamw_step(ParamStore<T>& params, const ParamStore<T>& grads, OptimizerState<T>& state, double lr,
                double beta1, double beta2, double eps, double weight_decay);

/// v = momentum*v + (g + wd*p); p -= lr*v.
template <typename T>
void sgd_step(ParamStore<T>& params, const ParamStore<T>& grads, OptimizerState<T>& state, double lr,
              double momentum, double weight_decay);

/// Linear warmup from 0, then half-cosine down to exactly 0 at step total-1.
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr, std::uint64_t warmup_steps);

/// Learning rate for the configured schedule (constant keeps the warmup ramp).
double scheduled_lr(ScheduleKind kind, std::uint64_t step, std::uint64_t total_steps, double base_lr,
                    std::uint64_t warmup_steps);

struct MetricRow {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;
  double eval_acc = 0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

inline constexpr const char* kMetricsHeader = "epoch,step,lr,train_loss,train_acc,eval_acc";
std::string metrics_csv(const std::vector<MetricRow>& rows);

/// Running sums of the epoch in progress.
struct EpochAccumulator {
  double loss_sum = 0;
  std::uint64_t correct = 0;
  std::uint64_t seen = 0;

  friend bool operator==(const EpochAccumulator&, const EpochAccumulator&) = default;
};

/// Everything needed to continue a run bit-exactly.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  VariantConfig model_config;
  TrainConfig train_config;
  std::uint64_t step = 0;
  EpochAccumulator partial;
  NormStats norm;
  std::vector<MetricRow> log;
  ShiftViT<float> model;
  OptimizerState<float> optimizer;
  Rng::State rng{};

  /// Fresh model (built from train_config.seed) and zeroed optimizer state.
  static Checkpoint initial(const VariantConfig& model_cfg, const TrainConfig& train_cfg, const NormStats& norm);
};

bool same_state(const Checkpoint& a, const Checkpoint& b);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);

/// Reads a checkpoint as stored. Distinct errors: BadMagicError, VersionError,
/// TruncatedError, ShapeMismatchError (arrays inconsistent with the stored config).
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint read_checkpoint(std::istream& is);

/// As above, but the arrays must also fit `expected`; the ShapeMismatchError
/// names the first offending array.
Checkpoint load_checkpoint(const std::filesystem::path& path, const VariantConfig& expected);

struct TrainOptions {
  /// Directory for metrics.csv and checkpoint.svck; empty disables files.
  std::filesystem::path out_dir;
  /// Stop once the global step reaches this value (a checkpoint is written).
  std::optional<std::uint64_t> stop_after_steps;
  /// Progress lines, one per epoch; may be null.
  std::ostream* progress = nullptr;
};

struct TrainResult {
  Checkpoint state;
  bool finished = false;
};

/// Runs (or resumes) training from `start`. Datasets are given raw; the
/// checkpoint's normalization constants are applied internally.
TrainResult train_loop(Checkpoint start, const Dataset& train, const Dataset& eval, const TrainOptions& options = {});

/// Top-1 accuracy of a model on already-normalized data.
double evaluate(ShiftViT<float>& model, const Dataset& data, std::size_t batch_size = 256);

/// Applies `norm` to a copy of `data`.
Dataset normalized_copy(const Dataset& data, const NormStats& norm);

}  // namespace shiftvit
