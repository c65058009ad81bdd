#include "prockd/params.hpp"

#include <bit>
#include <cstring>

namespace prockd {

ParamList prefixed(const ParamList& params, const std::string& prefix) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor});
  return out;
}

void append(ParamList& into, const ParamList& more) { into.insert(into.end(), more.begin(), more.end()); }

void set_trainable(const ParamList& params, bool trainable) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(trainable);
    t.zero_grad();
  }
}

std::uint64_t checksum(const ParamList& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) {
    for (char c : p.name) mix(static_cast<unsigned char>(c));
    for (auto d : p.tensor.shape()) mix(d);
    for (double v : p.tensor.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

std::size_t Rng::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Tensor randn(Shape shape, double stddev, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace prockd
