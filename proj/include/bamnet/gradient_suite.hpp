#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bamnet {

struct GradientCheckEntry {
    std::string name;
    double max_error = 0.0;
    double tolerance = 0.0;

    [[nodiscard]] bool passed() const { return max_error < tolerance; }
};

/// Float64 central-difference checks of every differentiable layer, the
/// attention pathways, and a full attention model on a 2 x 3 x 16 x 16
/// batch (>= 20 probed coordinates per parameter tensor).
std::vector<GradientCheckEntry> run_gradient_suite(std::uint64_t seed = 7);

}  // namespace bamnet
