#pragma once

#include <cmath>
#include <cstddef>

#include "bamnet/random.hpp"
#include "bamnet/tensor.hpp"

namespace bamnet {

/// Kaiming-uniform for relu networks: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
void kaiming_uniform(Tensor<T>& weight, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& w : weight.data()) w = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace bamnet
