// Copyright 2026 the ptlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PTLAB_COMMON_HPP_
#define PTLAB_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ptlab {

// Error taxonomy used across the pipeline. The CLI maps DataError/IoError to
// exit code 1 and ConfigError to exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// Training, masking and fold assignment must be bit-reproducible across runs
// and independent of the standard library's distribution implementations, so
// everything below is spelled out. The generator is splittable: derived
// streams for (seed, index) pairs let parallel instance building agree with
// the serial order.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed + 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection of the biased region.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    std::uint64_t lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool next_bool() { return (next_u64() >> 63) != 0; }

  // Standard normal via Box-Muller (no cached spare; keeps the stream simple).
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Normal truncated to +-2 sigma and rescaled so the resulting standard
  // deviation equals `stddev`.
  double next_truncated_normal(double stddev) {
    double z = next_normal();
    while (z < -2.0 || z > 2.0) z = next_normal();
    // Std of a +-2-sigma truncated standard normal.
    constexpr double kTruncStd = 0.8796256610342398;
    return z * (stddev / kTruncStd);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream for (seed, a, b). Used so that work item k
  // gets the same draws whether processed serially or in parallel.
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    Rng mixer(seed);
    std::uint64_t h = mixer.next_u64();
    h ^= a + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    Rng mixer2(h);
    std::uint64_t h2 = mixer2.next_u64();
    h2 ^= b + 0x9e3779b97f4a7c15ULL + (h2 << 6) + (h2 >> 2);
    return Rng(h2);
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// UTF-8
// ---------------------------------------------------------------------------

// Decodes strict UTF-8. Throws DataError naming the byte offset of the first
// invalid sequence (overlong encodings and surrogates rejected).
std::vector<char32_t> utf8_decode(std::string_view text);

void utf8_append(std::string& out, char32_t cp);
std::string utf8_encode(const std::vector<char32_t>& cps);

// ---------------------------------------------------------------------------
// Hashing (for artifact manifests)
// ---------------------------------------------------------------------------
std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

// Reads a whole file; throws IoError if it cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace ptlab

#endif  // PTLAB_COMMON_HPP_
