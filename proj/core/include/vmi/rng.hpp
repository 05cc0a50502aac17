#pragma once

#include <cstdint>
#include <string_view>

namespace vmi {

// Deterministic random stream with labeled splitting.
//
// Every experiment hangs off a single root seed. Components obtain child
// streams via split("component-name", index), derived from the stream's
// construction seed, so adding a new consumer never shifts the draws seen
// by an existing one. The generator core is splitmix64 and all floating
// draws are produced from raw 64-bit outputs, which keeps sequences
// bit-identical across platforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Standard normal via Box-Muller (one spare value cached).
  double normal();

  // Child stream derived from this stream's construction seed and a label.
  RngStream split(std::string_view label, std::uint64_t index = 0) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace vmi
