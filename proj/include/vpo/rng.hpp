#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace vpo {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_keys(std::uint64_t a, std::uint64_t b);
/// FNV-1a; stable across platforms, used for every text-derived key.
std::uint64_t fnv1a(std::string_view text);
std::string hex64(std::uint64_t value);

/// Per-call context handed to every backend. `seed` is the only source of
/// randomness a simulated backend may use.
struct CallContext {
  std::uint64_t seed = 0;
  std::string run_id;
};

/// Named substream keyed by (key, counter). Each run owns one, so the seed
/// handed to a backend depends only on the run and the call's position in it.
class Stream {
 public:
  Stream() = default;
  Stream(std::uint64_t key, std::string run_id) : key_(key), run_id_(std::move(run_id)) {}

  static Stream named(std::uint64_t root_seed, std::string_view name) {
    return Stream(mix_keys(root_seed, fnv1a(name)), std::string(name));
  }

  CallContext next() { return {mix_keys(key_, ++counter_), run_id_}; }
  Stream child(std::string_view name) const {
    return Stream(mix_keys(key_, fnv1a(name)), run_id_ + "/" + std::string(name));
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t counter) { counter_ = counter; }
  const std::string& run_id() const { return run_id_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::string run_id_;
};

/// Engine for a single backend call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  /// Uniform in [0,1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  double normal() { return normal_(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * n); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace vpo
