#include "alter/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace alter {

uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t master, uint64_t stream, uint64_t counter) {
  uint64_t state = master;
  uint64_t a = splitmix64(state);
  state ^= stream * 0x9e3779b97f4a7c15ULL;
  uint64_t b = splitmix64(state);
  state ^= counter * 0xd1b54a32d192ed03ULL;
  uint64_t c = splitmix64(state);
  return a ^ (b + 0x165667b19e3779f9ULL) ^ c;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(2.0 * M_PI * u2);
}

double Rng::gumbel() {
  double u = std::clamp(uniform(), 1e-10, 1.0 - 1e-10);
  return -std::log(-std::log(u));
}

int Rng::uniform_int(int n) {
  int v = static_cast<int>(uniform() * n);
  return std::min(v, n - 1);
}

uint64_t fnv1a(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace alter
