#pragma once

// Counter-based random streams. Every path owns an independent stream keyed
// by (master_seed, path_index); draws are a pure function of the key and the
// draw counter, so results do not depend on scheduling.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace evoflow {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }
};

/// SplitMix64 finalizer; used to derive sub-seeds from a master seed.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Deterministic child seed for an independent sub-experiment.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) noexcept {
  return mix64(master ^ mix64(tag + 0x632BE59BD9B4E019ull));
}

/// Gaussian and uniform draws for one path.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t master_seed, std::uint64_t path_index) noexcept
      : key_{static_cast<std::uint32_t>(master_seed),
             static_cast<std::uint32_t>(master_seed >> 32)},
        path_(path_index) {}

  std::uint64_t master_seed() const noexcept {
    return std::uint64_t{key_[0]} | (std::uint64_t{key_[1]} << 32);
  }
  std::uint64_t path_index() const noexcept { return path_; }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() noexcept {
    if (buffered_uniforms_ == 0) refill();
    return uniforms_[--buffered_uniforms_];
  }

  double gaussian() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller on a fresh pair of uniforms.
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  void gaussians(std::span<double> out) noexcept {
    for (double& x : out) x = gaussian();
  }

 private:
  void refill() noexcept {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(counter_),
                                  static_cast<std::uint32_t>(counter_ >> 32),
                                  static_cast<std::uint32_t>(path_),
                                  static_cast<std::uint32_t>(path_ >> 32)};
    ++counter_;
    const auto r = Philox4x32::block(ctr, key_);
    const std::uint64_t a = (std::uint64_t{r[0]} << 32) | r[1];
    const std::uint64_t b = (std::uint64_t{r[2]} << 32) | r[3];
    constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
    // Stored in reverse so that uniform() pops a first.
    uniforms_[1] = (static_cast<double>(a >> 11) + 0.5) * kScale;
    uniforms_[0] = (static_cast<double>(b >> 11) + 0.5) * kScale;
    buffered_uniforms_ = 2;
  }

  Philox4x32::Key key_;
  std::uint64_t path_;
  std::uint64_t counter_ = 0;
  std::array<double, 2> uniforms_{};
  int buffered_uniforms_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace evoflow
