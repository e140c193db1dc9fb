#pragma once

#include <cmath>
#include <cstdint>

#include "mtlforge/autodiff/tensor.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/random.hpp"

namespace mtl {

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

/// Glorot-uniform weights of shape [fan_in, fan_out].
inline Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  require(fan_in >= 1 && fan_out >= 1, "xavier_init: fan_in and fan_out must be >= 1");
  const double bound = xavier_bound(fan_in, fan_out);
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

inline Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  Rng rng(seed);
  return xavier_init(fan_in, fan_out, rng);
}

}  // namespace mtl
