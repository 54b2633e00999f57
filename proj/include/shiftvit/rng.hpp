#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string>

namespace shiftvit {

/// std::mt19937_64 with hand-written draws on top, so results do not depend on
/// the standard library's distribution implementations. The engine state is
/// kept as its standard text form, which is what checkpoints store.
class Rng {
 public:
  using result_type = std::uint64_t;
  using State = std::string;

  explicit Rng(std::uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next(); }
  std::uint64_t next();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound); bound > 0.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal (Box-Muller, no cached second value).
  double normal();
  /// Normal with given std, redrawn until within +-2 std.
  double truncated_normal(double std);

  State state() const;
  /// Throws ContractError if `s` is not a serialized engine.
  void set_state(const State& s);

 private:
  std::mt19937_64 engine_;
};

/// Mixes several integers into one seed (splitmix64 chaining).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace shiftvit
