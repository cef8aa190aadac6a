#include "spde/rng.hpp"

#include <cmath>
#include <numbers>

namespace spde {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// 53-bit uniform in (0, 1]; never returns 0 so log() is safe.
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
  return (static_cast<double>(bits & ((1ULL << 53) - 1)) + 1.0) * 0x1.0p-53;
}

}  // namespace

Philox4x32::Counter Philox4x32::generate(Counter ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

NormalStream::NormalStream(std::uint64_t seed, StreamTag tag, std::uint64_t path)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
      path_lo_(static_cast<std::uint32_t>(path)),
      path_hi_tag_(static_cast<std::uint32_t>((path >> 32) & 0xffffu) |
                   (static_cast<std::uint32_t>(tag) << 16)) {}

void NormalStream::normals(std::uint64_t step, std::span<double> out) const {
  const auto step32 = static_cast<std::uint32_t>(step);
  for (std::size_t block = 0; 2 * block < out.size(); ++block) {
    const auto r = Philox4x32::generate({step32, static_cast<std::uint32_t>(block), path_lo_, path_hi_tag_}, key_);
    const double u1 = to_unit(r[0], r[1]);
    const double u2 = to_unit(r[2], r[3]);
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    out[2 * block] = rad * std::cos(ang);
    if (2 * block + 1 < out.size()) out[2 * block + 1] = rad * std::sin(ang);
  }
}

double NormalStream::normal(std::uint64_t step, std::size_t mode) const {
  const auto r = Philox4x32::generate(
      {static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(mode / 2), path_lo_, path_hi_tag_}, key_);
  const double rad = std::sqrt(-2.0 * std::log(to_unit(r[0], r[1])));
  const double ang = 2.0 * std::numbers::pi * to_unit(r[2], r[3]);
  return (mode % 2 == 0) ? rad * std::cos(ang) : rad * std::sin(ang);
}

double NormalStream::uniform(std::uint64_t step, std::size_t slot) const {
  const auto r = Philox4x32::generate(
      {static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(slot / 2) | 0x80000000u, path_lo_, path_hi_tag_},
      key_);
  return (slot % 2 == 0) ? to_unit(r[0], r[1]) : to_unit(r[2], r[3]);
}

}  // namespace spde
