#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "bamnet/autodiff.hpp"
#include "bamnet/ops.hpp"
#include "bamnet/random.hpp"
#include "bamnet/tensor.hpp"

namespace bamnet {

/// Learnable state of one normalization layer.
template <typename T>
struct BatchNormParams {
    Parameter<T> gamma;
    Parameter<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;

    BatchNormParams() = default;
    explicit BatchNormParams(std::size_t channels, T gamma_init = T{1})
        : gamma(Tensor<T>::full({channels}, gamma_init)),
          beta(Tensor<T>::zeros({channels})),
          running_mean(Tensor<T>::zeros({channels})),
          running_var(Tensor<T>::full({channels}, T{1})) {}

    Var<T> apply(Tape<T>& tape, Var<T> x, Mode mode) {
        return batch_norm(x, tape.param(gamma), tape.param(beta), running_mean, running_var,
                          BatchNormOptions{mode, 0.1, 1e-5});
    }
};

/// Bottleneck attention module.
///
/// Channel pathway: global average pool -> dense C->C/r -> relu ->
/// dense C/r->C -> batch-norm over the batch.
/// Spatial pathway: 1x1 conv C->C/r -> two 3x3 convs with dilation d and
/// padding d -> 1x1 conv C/r->1, each conv followed by batch-norm, the first
/// three also by relu.
/// Refinement: F + F * sigmoid(channel + spatial), both maps broadcast to
/// N x C x H x W.
///
/// The last batch-norm of each pathway starts with gamma = 0, so a freshly
/// initialized module computes exactly 1.5 * F.
template <typename T>
class BamParams {
public:
    BamParams(std::size_t channels, std::size_t reduction = 16, std::size_t dilation = 4);

    [[nodiscard]] std::size_t channels() const { return channels_; }
    [[nodiscard]] std::size_t reduction() const { return reduction_; }
    [[nodiscard]] std::size_t dilation() const { return dilation_; }
    [[nodiscard]] std::size_t hidden() const { return channels_ / reduction_; }

    /// Kaiming-uniform weights, unit gammas except the two final ones (zero),
    /// zero betas and biases.
    void initialize(Rng& rng);

    /// Visits every parameter under a stable dotted name, in a fixed order.
    void for_each_parameter(const std::function<void(const std::string&, Parameter<T>&)>& fn);
    /// Visits the running statistics of every normalization layer.
    void for_each_buffer(const std::function<void(const std::string&, Tensor<T>&)>& fn);

    [[nodiscard]] std::size_t parameter_count();

    // channel pathway
    Parameter<T> fc1_weight;  // C x C/r
    Parameter<T> fc1_bias;    // C/r
    Parameter<T> fc2_weight;  // C/r x C (feeds a normalization, so no bias)
    BatchNormParams<T> channel_bn;

    // spatial pathway
    Parameter<T> reduce_weight;   // C/r x C x 1 x 1
    BatchNormParams<T> reduce_bn;
    Parameter<T> dilated1_weight;  // C/r x C/r x 3 x 3
    BatchNormParams<T> dilated1_bn;
    Parameter<T> dilated2_weight;
    BatchNormParams<T> dilated2_bn;
    Parameter<T> project_weight;  // 1 x C/r x 1 x 1
    BatchNormParams<T> spatial_bn;

private:
    std::size_t channels_;
    std::size_t reduction_;
    std::size_t dilation_;
};

/// Pre-sigmoid channel attention, N x C x 1 x 1.
template <typename T>
Var<T> channel_gate(Var<T> features, BamParams<T>& params, Mode mode);

/// Pre-sigmoid spatial attention, N x 1 x H x W.
template <typename T>
Var<T> spatial_gate(Var<T> features, BamParams<T>& params, Mode mode);

/// sigmoid(broadcast(channel_gate) + broadcast(spatial_gate)).
template <typename T>
Var<T> attention_map(Var<T> features, BamParams<T>& params, Mode mode);

/// F + F * attention_map(F).
template <typename T>
Var<T> bam_refine(Var<T> features, BamParams<T>& params, Mode mode);

/// Trainable scalars of a module on C channels with reduction r; the
/// dilation does not change the count.
std::size_t bam_parameter_count(std::size_t channels, std::size_t reduction);

}  // namespace bamnet
