#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace spde {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Every random number used by the toolkit is a pure function of
/// (master seed, stream tag, path index, step index, mode block), so results
/// are independent of thread count and evaluation order. Layout of one block:
///
///   key     = {seed_lo, seed_hi}
///   counter = {step, mode_block, path_lo, (path_hi & 0xffff) | tag << 16}
///
/// Uniform draws set the top bit of the mode_block word.
///
/// Each block yields four 32-bit words, i.e. two 53-bit uniforms, i.e. two
/// standard normals via Box-Muller (modes 2b and 2b+1 of block b).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key);
};

inline constexpr const char* kRngName = "philox4x32-10/box-muller";

/// Stream tags separate independent uses of the same (seed, path) pair.
enum class StreamTag : std::uint16_t {
  Increments = 1,
  InitialState = 2,
  Endpoint = 3,
  Auxiliary = 4,
};

/// Deterministic normal stream for one path.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, StreamTag tag, std::uint64_t path);

  /// Standard normals for step `step`, modes 0..out.size()-1.
  void normals(std::uint64_t step, std::span<double> out) const;
  double normal(std::uint64_t step, std::size_t mode) const;
  /// Uniform in (0, 1] at (step, slot).
  double uniform(std::uint64_t step, std::size_t slot) const;

 private:
  Philox4x32::Key key_;
  std::uint32_t path_lo_;
  std::uint32_t path_hi_tag_;
};

}  // namespace spde
