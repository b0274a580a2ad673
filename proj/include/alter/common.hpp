#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace alter {

// Every random draw in the project comes from a fresh engine keyed by
// (master seed, stream id, counter). No long-lived engine state exists, so a
// checkpoint needs only parameters and step index to resume bit-exactly.
uint64_t splitmix64(uint64_t& state);
uint64_t mix_seed(uint64_t master, uint64_t stream, uint64_t counter);

enum Stream : uint64_t {
  kStreamDataset = 1,
  kStreamShuffle = 2,
  kStreamTimestep = 3,
  kStreamNoise = 4,
  kStreamGumbelGen = 5,
  kStreamGumbelRouter = 6,
  kStreamInitTheta = 7,
  kStreamInitPhi = 8,
  kStreamSampler = 9,
  kStreamHeldOut = 10,
};

// Explicit transforms over mt19937_64. std::normal_distribution and friends
// are implementation-defined, which would break cross-build determinism.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double uniform();        // [0, 1), 53-bit resolution
  double normal();         // Box-Muller, one draw per two uniforms
  double gumbel();         // -log(-log(u)), u clamped to [1e-10, 1 - 1e-10]
  int uniform_int(int n);  // [0, n)

 private:
  std::mt19937_64 engine_;
};

// Thrown when a computation produces values the run cannot continue with
// (non-finite losses, failed cross-checks). The CLI maps it to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

uint64_t fnv1a(const void* data, size_t n);

// Shortest round-trip decimal for a double; used for CSV and config echoes.
std::string format_double(double v);

}  // namespace alter
