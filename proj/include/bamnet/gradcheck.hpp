#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "bamnet/autodiff.hpp"
#include "bamnet/tensor.hpp"

namespace bamnet {

struct GradCheckOptions {
    double h = 1e-5;
    /// Coordinates probed per tensor; 0 probes every coordinate.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
    /// Combine central differences at h and h/2 as (4 D(h/2) - D(h)) / 3,
    /// cancelling the O(h^2) truncation term. Helps coordinates whose true
    /// gradient nearly cancels under strong curvature.
    bool extrapolate = false;
};

struct GradCheckResult {
    double max_error = 0.0;
    std::size_t checked = 0;
    /// Probes whose +h or -h evaluation changed a relu sign or pooling
    /// winner; central differences are invalid across such a kink, so these
    /// coordinates are replaced by the next candidate.
    std::size_t kinks_skipped = 0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
double relative_error(double analytic, double numeric);

using InputLossBuilder = std::function<Var<double>(Tape<double>&, Var<double>)>;
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Max relative error between the reverse-mode gradient of build(input) and
/// central differences over the probed input coordinates.
double grad_check(const InputLossBuilder& build, const Tensor<double>& input, const GradCheckOptions& opt = {});
GradCheckResult grad_check_detailed(const InputLossBuilder& build, const Tensor<double>& input,
                                    const GradCheckOptions& opt = {});

/// Same check against a parameter the builder reads. The parameter's value is
/// restored and its gradient cleared on return.
double grad_check_parameter(const LossBuilder& build, Parameter<double>& param, const GradCheckOptions& opt = {});
GradCheckResult grad_check_parameter_detailed(const LossBuilder& build, Parameter<double>& param,
                                              const GradCheckOptions& opt = {});

}  // namespace bamnet
