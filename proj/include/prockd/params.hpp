#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "prockd/tensor.hpp"

namespace prockd {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

// Prefixes every name with `prefix`.
ParamList prefixed(const ParamList& params, const std::string& prefix);
void append(ParamList& into, const ParamList& more);
void set_trainable(const ParamList& params, bool trainable);
// FNV-1a over names, shapes and the raw bits of every value.
std::uint64_t checksum(const ParamList& params);

// splitmix64 finalizer; derives independent stream seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0);
  double uniform(double lo = 0.0, double hi = 1.0);
  std::size_t index(std::size_t n);  // uniform in [0, n)
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Tensor randn(Shape shape, double stddev, Rng& rng);

}  // namespace prockd
