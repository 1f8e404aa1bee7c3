#pragma once

#include <cmath>
#include <vector>

#include "cabin/rng.hpp"
#include "cabin/tensor.hpp"

namespace cabin {

// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
template <typename Scalar>
Tensor<Scalar> kaiming_uniform(Shape shape, Index fan_in, Rng& rng, bool requires_grad = true) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<Scalar> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  return Tensor<Scalar>(std::move(shape), std::move(values), requires_grad);
}

}  // namespace cabin
