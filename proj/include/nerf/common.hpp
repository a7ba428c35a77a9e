#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace nerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Error hierarchy. Every failure that crosses a module boundary is one of these.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated input file; the message names the offending record.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Pixel or index outside the addressable range.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a precondition (mismatched lengths, wrong trace, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Deterministic random source. Draws are reproducible for a given seed and
/// independent of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double operator()() { return uniform(); }

  /// Standard normal via Box-Muller on two uniforms.
  double normal();

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

/// Mixes several integers into one seed (splitmix64 finalizer chain).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// 64-bit FNV-1a over a byte range.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

int default_threads();

/// Runs `fn(i)` for every i in [0, count) on up to `threads` workers. Work items
/// are claimed dynamically, so callers must write results to per-item slots and
/// reduce them in index order afterwards to stay deterministic.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace nerf
