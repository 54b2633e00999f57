#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shiftvit/tensor.hpp"

namespace shiftvit {

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kEndToEndTolerance = 1e-4;
inline constexpr double kF32Tolerance = 1e-2;
inline constexpr double kFiniteDiffStep = 1e-5;

struct GradcheckRow {
  std::string op;
  std::string shape;
  double max_rel_err = 0;
  double threshold = 0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;

  bool all_pass() const;
  /// Row with the largest error-to-threshold ratio; null when empty.
  const GradcheckRow* worst() const;
  std::string table() const;
};

/// Tape gradients of every op, composite layer and the end-to-end Nano model
/// against central finite differences of the f64 computation. Inputs are
/// uniform in [-1, 1]. In f32 mode the analytic side runs in single precision
/// and every threshold becomes 1e-2.
GradcheckReport run_gradcheck(std::uint64_t seed, Dtype dtype = Dtype::f64);

}  // namespace shiftvit
