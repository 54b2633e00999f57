#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "shiftvit/tensor.hpp"

namespace shiftvit {

/// Per-channel affine normalization constants.
struct NormStats {
  std::array<float, 3> mean{0, 0, 0};
  std::array<float, 3> std{1, 1, 1};

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct Dataset {
  Tensor<float> images;  // [N, 3, S, S]
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  /// Throws DimensionError / ContractError when images, labels and classes disagree.
  void validate() const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1]; images are centre-padded with zeros or
/// nearest-resized to `input_size`; grayscale is replicated to 3 channels.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t input_size);

/// Writes the IDX pair (u8 pixels, single channel taken from channel 0). Used for fixtures.
void save_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const std::vector<std::uint8_t>& pixels, std::size_t count, std::size_t rows, std::size_t cols,
              const std::vector<std::uint8_t>& label_bytes);

/// Four-way task: a random binary sprite is drawn in channel 0 and the same
/// sprite in channel 1, displaced by one pixel left, right, up or down; the
/// label is that direction. Channel 2 stays zero.
Dataset synthetic_shift_task(std::size_t n, std::size_t size, std::uint64_t seed);

/// Edge of the square sprite in pixels.
inline constexpr std::size_t kSpriteSize = 6;

NormStats compute_norm_stats(const Tensor<float>& images);
void normalize(Tensor<float>& images, const NormStats& stats);
void denormalize(Tensor<float>& images, const NormStats& stats);

/// Sample order for one epoch: a permutation keyed only by (seed, epoch),
/// cut into ceil(N / batch_size) batches, last one possibly partial.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch);

struct Batch {
  Tensor<float> images;
  std::vector<std::uint32_t> labels;
};

Batch gather(const Dataset& data, const std::vector<std::size_t>& indices);

/// All batches of one epoch.
std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

/// Mirrors every image along W.
void hflip(Tensor<float>& images, std::size_t index);

/// Parses "synthetic:<n>:<seed>" or "idx:<images>,<labels>" (bare
/// "<images>,<labels>" also accepted). Synthetic specs give an eval split of
/// n/4 samples drawn with seed + 1; IDX specs give train and eval from the
/// same files unless "idx:<train-img>,<train-lbl>,<eval-img>,<eval-lbl>".
struct DataSplits {
  Dataset train;
  Dataset eval;
};

DataSplits load_data_spec(std::string_view spec, std::size_t input_size);

}  // namespace shiftvit
