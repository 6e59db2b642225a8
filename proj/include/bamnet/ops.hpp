#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <type_traits>

#include "bamnet/autodiff.hpp"
#include "bamnet/tensor.hpp"

namespace bamnet {

enum class Mode { Train, Eval };

/// Optional operand that does not take part in template deduction, so
/// callers may pass std::nullopt.
template <typename T>
using OptVar = std::optional<std::type_identity_t<Var<T>>>;

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
};

/// floor((in + 2p - d(k-1) - 1) / s) + 1; throws ShapeError when < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dOptions& opt);

/// Cross-correlation of an NCHW input with an OIKK kernel.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, OptVar<T> bias, const Conv2dOptions& opt);

struct BatchNormOptions {
    Mode mode = Mode::Train;
    double momentum = 0.1;
    double epsilon = 1e-5;
};

/// Per-channel normalization of an N x C or N x C x H x W input. Train mode
/// uses batch statistics over every axis but C and folds them into the
/// running statistics (running variance is the unbiased estimate); eval mode
/// normalizes with the running statistics.
template <typename T>
Var<T> batch_norm(Var<T> input, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                  const BatchNormOptions& opt);

/// Windowed max over NCHW. Padding cells never win. On ties the first
/// element in row-major window order receives the gradient.
template <typename T>
Var<T> max_pool2d(Var<T> input, std::size_t window, std::size_t stride, std::size_t padding = 0);

/// N x C x H x W -> N x C x 1 x 1 means.
template <typename T>
Var<T> global_avg_pool(Var<T> input);

enum class PoolKind { Max, GlobalAvg };

template <typename T>
Var<T> pool(Var<T> input, PoolKind kind, std::size_t window = 0, std::size_t stride = 0);

/// x (N x F) * w (F x G) + b (G).
template <typename T>
Var<T> dense(Var<T> input, Var<T> weight, OptVar<T> bias);

template <typename T>
Var<T> relu(Var<T> input);

template <typename T>
Var<T> sigmoid(Var<T> input);

enum class ActivationKind { Relu, Sigmoid };

template <typename T>
Var<T> activation(Var<T> input, ActivationKind kind);

/// Mean over rows of -log softmax(logits)[target]. targets must be one-hot
/// rows of the logits' shape.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& targets);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T factor);

/// Sum of every element, returned with shape [1].
template <typename T>
Var<T> sum(Var<T> a);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

/// Concatenation of NCHW tensors along C.
template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);

/// Broadcast sum of a channel map (N x C x 1 x 1) and a spatial map
/// (N x 1 x H x W) into N x C x H x W.
template <typename T>
Var<T> broadcast_gate_sum(Var<T> channel_map, Var<T> spatial_map);

/// Inverted dropout. Identity in eval mode or when p == 0; the mask is a
/// pure function of seed.
template <typename T>
Var<T> dropout(Var<T> input, double p, std::uint64_t seed, Mode mode);

/// Row-wise softmax of an N x K tensor, max-subtracted.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace bamnet
