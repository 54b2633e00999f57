#include "shiftvit/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "shiftvit/error.hpp"

namespace shiftvit {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next() { return engine_(); }

Rng::State Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const State& s) {
  std::istringstream is(s);
  std::mt19937_64 e;
  is >> e;
  if (!is) throw ContractError("malformed rng state");
  engine_ = e;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t bound) {
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = max() - max() % bound;
  std::uint64_t v;
  do {
    v = next();
  } while (v >= limit);
  return v % bound;
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double std) {
  double v;
  do {
    v = normal();
  } while (std::abs(v) > 2.0);
  return v * std;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a;
  const std::uint64_t h = splitmix64(x);
  x = h ^ (b + 0x632be59bd9b4e019ULL);
  return splitmix64(x);
}

}  // namespace shiftvit
