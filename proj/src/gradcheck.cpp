#include "bamnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bamnet/random.hpp"

namespace bamnet {
namespace {

struct Evaluation {
    double loss;
    std::uint64_t signature;
};

void validate(const GradCheckOptions& opt) {
    if (!(opt.h >= 1e-7 && opt.h <= 1e-3)) throw std::invalid_argument("grad_check: h must lie in [1e-7, 1e-3]");
}

// Candidates in probe order: all coordinates ascending, or a seeded
// permutation when sampling.
std::vector<std::size_t> candidate_order(std::size_t n, const GradCheckOptions& opt) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_coords == 0 || opt.max_coords >= n) return idx;
    Rng rng(mix_seed(opt.seed, n));
    rng.shuffle(idx);
    return idx;
}

// Central differences over candidates; `perturb(i, delta)` sets coordinate i
// to its original value plus delta (delta 0 restores) and evaluates.
template <typename Perturb>
GradCheckResult compare(const Tensor<double>& analytic, std::uint64_t base_signature, const GradCheckOptions& opt,
                        Perturb&& perturb) {
    GradCheckResult r;
    const std::size_t n = analytic.numel();
    const std::size_t want = opt.max_coords == 0 ? n : std::min(opt.max_coords, n);
    // nullopt when a probe crossed a kink
    auto central = [&](std::size_t i, double h) -> std::optional<double> {
        const Evaluation up = perturb(i, h);
        const Evaluation down = perturb(i, -h);
        perturb(i, 0.0);
        if (up.signature != base_signature || down.signature != base_signature) return std::nullopt;
        return (up.loss - down.loss) / (2.0 * h);
    };
    for (auto i : candidate_order(n, opt)) {
        if (r.checked == want) break;
        auto numeric = central(i, opt.h);
        if (numeric && opt.extrapolate) {
            const auto half = central(i, 0.5 * opt.h);
            numeric = half ? std::optional((4.0 * *half - *numeric) / 3.0) : std::nullopt;
        }
        if (!numeric) {
            ++r.kinks_skipped;
            continue;
        }
        r.max_error = std::max(r.max_error, relative_error(analytic[i], *numeric));
        ++r.checked;
    }
    return r;
}

}  // namespace

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check_detailed(const InputLossBuilder& build, const Tensor<double>& input,
                                    const GradCheckOptions& opt) {
    validate(opt);
    Tensor<double> analytic;
    std::uint64_t base = 0;
    {
        Tape<double> tape;
        tape.track_branches(true);
        auto x = tape.leaf(input, true);
        auto loss = build(tape, x);
        base = tape.branch_signature();
        tape.backward(loss);
        analytic = tape.grad(x);
        if (analytic.empty()) analytic = Tensor<double>(input.shape());
    }
    Tensor<double> probe = input;
    return compare(analytic, base, opt, [&](std::size_t i, double delta) {
        probe[i] = input[i] + delta;
        if (delta == 0.0) return Evaluation{0.0, base};
        Tape<double> tape;
        tape.track_branches(true);
        const double loss = build(tape, tape.leaf(probe, false)).value()[0];
        return Evaluation{loss, tape.branch_signature()};
    });
}

double grad_check(const InputLossBuilder& build, const Tensor<double>& input, const GradCheckOptions& opt) {
    return grad_check_detailed(build, input, opt).max_error;
}

GradCheckResult grad_check_parameter_detailed(const LossBuilder& build, Parameter<double>& param,
                                              const GradCheckOptions& opt) {
    validate(opt);
    param.zero_grad();
    std::uint64_t base = 0;
    {
        Tape<double> tape;
        tape.track_branches(true);
        auto loss = build(tape);
        base = tape.branch_signature();
        tape.backward(loss);
    }
    const Tensor<double> analytic = param.grad.empty() ? Tensor<double>(param.value.shape()) : param.grad;
    param.zero_grad();
    const Tensor<double> original = param.value;
    auto result = compare(analytic, base, opt, [&](std::size_t i, double delta) {
        param.value[i] = original[i] + delta;
        if (delta == 0.0) return Evaluation{0.0, base};
        Tape<double> tape;
        tape.track_branches(true);
        const double loss = build(tape).value()[0];
        return Evaluation{loss, tape.branch_signature()};
    });
    param.zero_grad();
    return result;
}

double grad_check_parameter(const LossBuilder& build, Parameter<double>& param, const GradCheckOptions& opt) {
    return grad_check_parameter_detailed(build, param, opt).max_error;
}

}  // namespace bamnet
