#include "shiftvit/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "shiftvit/binary_io.hpp"
#include "shiftvit/rng.hpp"

namespace shiftvit {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::ifstream open_binary(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw FileError("cannot open '" + p.string() + "'");
  return is;
}

std::uint32_t read_magic(std::istream& is, std::uint32_t want, const std::filesystem::path& p) {
  const auto magic = io::read_be<std::uint32_t>(is, "IDX magic");
  if (magic != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08x (expected 0x%08x)", magic, want);
    throw BadMagicError("bad IDX magic in '" + p.string() + "': " + buf);
  }
  return magic;
}

// Maps output coordinate `o` of `out_extent` to a source coordinate, or -1 for padding.
std::ptrdiff_t source_coord(std::size_t o, std::size_t src_extent, std::size_t out_extent, bool pad) {
  if (pad) {
    const std::size_t before = (out_extent - src_extent) / 2;
    if (o < before || o >= before + src_extent) return -1;
    return static_cast<std::ptrdiff_t>(o - before);
  }
  return static_cast<std::ptrdiff_t>(o * src_extent / out_extent);
}

}  // namespace

void Dataset::validate() const {
  if (images.shape().n() != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(images.shape().n()) + " images but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (auto l : labels) {
    if (l >= num_classes) {
      throw ContractError("label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t input_size) {
  if (input_size == 0) throw ConfigError("load_idx: input_size must be positive");
  auto is = open_binary(images_path);
  read_magic(is, kIdxImages, images_path);
  const std::size_t n = io::read_be<std::uint32_t>(is, "IDX image count");
  const std::size_t rows = io::read_be<std::uint32_t>(is, "IDX rows");
  const std::size_t cols = io::read_be<std::uint32_t>(is, "IDX cols");
  std::vector<std::uint8_t> pixels(n * rows * cols);
  io::read_exact(is, pixels.data(), pixels.size(), "IDX image payload");

  auto ls = open_binary(labels_path);
  read_magic(ls, kIdxLabels, labels_path);
  const std::size_t n_labels = io::read_be<std::uint32_t>(ls, "IDX label count");
  if (n_labels != n) {
    throw DimMismatchError("IDX image file has " + std::to_string(n) + " items but label file has " +
                           std::to_string(n_labels));
  }
  std::vector<std::uint8_t> raw_labels(n);
  io::read_exact(ls, raw_labels.data(), raw_labels.size(), "IDX label payload");

  Dataset d;
  d.split = "idx";
  d.labels.assign(raw_labels.begin(), raw_labels.end());
  d.num_classes = d.labels.empty() ? 1 : *std::max_element(d.labels.begin(), d.labels.end()) + 1u;
  const std::size_t s = input_size;
  const bool pad = rows <= s && cols <= s;
  d.images = Tensor<float>(Shape(n, 3, s, s));
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* src = pixels.data() + i * rows * cols;
    for (std::size_t y = 0; y < s; ++y) {
      const auto sy = source_coord(y, rows, s, pad);
      for (std::size_t x = 0; x < s; ++x) {
        const auto sx = source_coord(x, cols, s, pad);
        const float v = (sy < 0 || sx < 0) ? 0.0f : static_cast<float>(src[sy * cols + sx]) / 255.0f;
        for (std::size_t c = 0; c < 3; ++c) d.images.at(i, c, y, x) = v;
      }
    }
  }
  return d;
}

void save_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const std::vector<std::uint8_t>& pixels, std::size_t count, std::size_t rows, std::size_t cols,
              const std::vector<std::uint8_t>& label_bytes) {
  if (pixels.size() != count * rows * cols || label_bytes.size() != count) {
    throw DimensionError("save_idx: payload sizes disagree with count/rows/cols");
  }
  auto be32 = [](std::ostream& os, std::uint32_t v) {
    v = io::byteswap_if(v, std::endian::big);
    os.write(reinterpret_cast<const char*>(&v), 4);
  };
  std::ofstream os(images, std::ios::binary);
  be32(os, kIdxImages);
  be32(os, static_cast<std::uint32_t>(count));
  be32(os, static_cast<std::uint32_t>(rows));
  be32(os, static_cast<std::uint32_t>(cols));
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  std::ofstream ls(labels, std::ios::binary);
  be32(ls, kIdxLabels);
  be32(ls, static_cast<std::uint32_t>(count));
  ls.write(reinterpret_cast<const char*>(label_bytes.data()), static_cast<std::streamsize>(label_bytes.size()));
  if (!os || !ls) throw FileError("save_idx: write failed");
}

Dataset synthetic_shift_task(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size < 8) throw ConfigError("synthetic_shift_task: size must be >= 8, got " + std::to_string(size));
  const std::size_t k = std::min(kSpriteSize, size - 2);
  Rng rng(seed);
  Dataset d;
  d.split = "synthetic";
  d.num_classes = 4;
  d.labels.resize(n);
  d.images = Tensor<float>(Shape(n, 3, size, size));
  // channel 1 at (y, x) repeats channel 0 at (y + dy, x + dx)
  constexpr std::array<std::array<int, 2>, 4> kOffsets{{{0, 1}, {0, -1}, {1, 0}, {-1, 0}}};
  std::vector<float> sprite(k * k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint32_t>(rng.below(4));
    d.labels[i] = label;
    for (auto& v : sprite) v = (rng.next() >> 63) != 0 ? 1.0f : 0.0f;
    // keep both copies inside the frame: origin in [1, size - k - 1]
    const std::size_t y0 = 1 + rng.below(size - k - 1);
    const std::size_t x0 = 1 + rng.below(size - k - 1);
    const int dy = kOffsets[label][0];
    const int dx = kOffsets[label][1];
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < k; ++c) {
        d.images.at(i, 0, y0 + r, x0 + c) = sprite[r * k + c];
        d.images.at(i, 1, static_cast<std::size_t>(static_cast<int>(y0 + r) - dy),
                    static_cast<std::size_t>(static_cast<int>(x0 + c) - dx)) = sprite[r * k + c];
      }
  }
  return d;
}

NormStats compute_norm_stats(const Tensor<float>& images) {
  const Shape& s = images.shape();
  if (s.c() != 3) throw DimensionError("compute_norm_stats: expected 3 channels, got " + s.str());
  NormStats st;
  const std::size_t count = s.n() * s.plane();
  if (count == 0) return st;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < s.n(); ++n)
      for (std::size_t p = 0; p < s.plane(); ++p) {
        const double v = images[(n * 3 + c) * s.plane() + p];
        sum += v;
        sq += v * v;
      }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
    const double sd = std::sqrt(var);
    st.mean[c] = static_cast<float>(mean);
    st.std[c] = sd < 1e-6 ? 1.0f : static_cast<float>(sd);
  }
  return st;
}

void normalize(Tensor<float>& images, const NormStats& stats) {
  const Shape& s = images.shape();
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t p = 0; p < s.plane(); ++p) {
        float& v = images[(n * s.c() + c) * s.plane() + p];
        v = (v - stats.mean[c]) / stats.std[c];
      }
}

void denormalize(Tensor<float>& images, const NormStats& stats) {
  const Shape& s = images.shape();
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t p = 0; p < s.plane(); ++p) {
        float& v = images[(n * s.c() + c) * s.plane() + p];
        v = v * stats.std[c] + stats.mean[c];
      }
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (batch_size == 0) throw ContractError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  }
  return out;
}

Batch gather(const Dataset& data, const std::vector<std::size_t>& indices) {
  const Shape& s = data.images.shape();
  const std::size_t per = s.c() * s.plane();
  Batch b{Tensor<float>(Shape(indices.size(), s.c(), s.h(), s.w())), {}};
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= data.size()) throw ContractError("gather: index " + std::to_string(src) + " out of range");
    std::copy_n(data.images.data().begin() + static_cast<std::ptrdiff_t>(src * per), per,
                b.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    b.labels.push_back(data.labels[src]);
  }
  return b;
}

std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(data.size(), batch_size, seed, epoch)) out.push_back(gather(data, idx));
  return out;
}

void hflip(Tensor<float>& images, std::size_t index) {
  const Shape& s = images.shape();
  for (std::size_t c = 0; c < s.c(); ++c)
    for (std::size_t y = 0; y < s.h(); ++y) {
      float* row = images.data().data() + images.index(index, c, y, 0);
      std::reverse(row, row + s.w());
    }
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::uint64_t parse_u64(std::string_view s, const char* what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(std::string("bad ") + what + " '" + std::string(s) + "' in data spec");
  }
  return v;
}

}  // namespace

DataSplits load_data_spec(std::string_view spec, std::size_t input_size) {
  if (spec.rfind("synthetic:", 0) == 0) {
    const auto parts = split(spec.substr(10), ':');
    if (parts.size() != 2) throw ConfigError("data spec must look like synthetic:<n>:<seed>");
    const auto n = parse_u64(parts[0], "sample count");
    const auto seed = parse_u64(parts[1], "seed");
    DataSplits d{synthetic_shift_task(n, input_size, seed),
                 synthetic_shift_task(std::max<std::uint64_t>(1, n / 4), input_size, seed + 1)};
    d.train.split = "train";
    d.eval.split = "eval";
    return d;
  }
  if (spec.rfind("idx:", 0) == 0) spec = spec.substr(4);
  const auto files = split(spec, ',');
  if (files.size() != 2 && files.size() != 4) {
    throw ConfigError("data spec must be synthetic:<n>:<seed> or idx:<images>,<labels>[,<eval-images>,<eval-labels>]");
  }
  DataSplits d;
  d.train = load_idx(std::string(files[0]), std::string(files[1]), input_size);
  d.eval = files.size() == 4 ? load_idx(std::string(files[2]), std::string(files[3]), input_size) : d.train;
  d.train.split = "train";
  d.eval.split = "eval";
  const std::size_t k = std::max(d.train.num_classes, d.eval.num_classes);
  d.train.num_classes = d.eval.num_classes = k;
  return d;
}

}  // namespace shiftvit
