#include "bamnet/bam.hpp"

#include <stdexcept>

#include "bamnet/init.hpp"

namespace bamnet {

template <typename T>
BamParams<T>::BamParams(std::size_t channels, std::size_t reduction, std::size_t dilation)
    : channels_(channels), reduction_(reduction), dilation_(dilation) {
    if (channels == 0 || reduction == 0 || dilation == 0) {
        throw std::invalid_argument("BAM: channels, reduction ratio and dilation must be positive");
    }
    if (channels % reduction != 0) {
        throw std::invalid_argument("BAM: channel count " + std::to_string(channels) +
                                    " is not divisible by reduction ratio " + std::to_string(reduction));
    }
    const std::size_t h = hidden();
    fc1_weight = Parameter<T>(Tensor<T>({channels, h}));
    fc1_bias = Parameter<T>(Tensor<T>({h}));
    fc2_weight = Parameter<T>(Tensor<T>({h, channels}));
    channel_bn = BatchNormParams<T>(channels, T{0});
    reduce_weight = Parameter<T>(Tensor<T>({h, channels, 1, 1}));
    reduce_bn = BatchNormParams<T>(h);
    dilated1_weight = Parameter<T>(Tensor<T>({h, h, 3, 3}));
    dilated1_bn = BatchNormParams<T>(h);
    dilated2_weight = Parameter<T>(Tensor<T>({h, h, 3, 3}));
    dilated2_bn = BatchNormParams<T>(h);
    project_weight = Parameter<T>(Tensor<T>({1, h, 1, 1}));
    spatial_bn = BatchNormParams<T>(1, T{0});
}

template <typename T>
void BamParams<T>::initialize(Rng& rng) {
    const std::size_t h = hidden();
    kaiming_uniform(fc1_weight.value, channels_, rng);
    fc1_bias.value.fill(T{0});
    kaiming_uniform(fc2_weight.value, h, rng);
    kaiming_uniform(reduce_weight.value, channels_, rng);
    kaiming_uniform(dilated1_weight.value, h * 9, rng);
    kaiming_uniform(dilated2_weight.value, h * 9, rng);
    kaiming_uniform(project_weight.value, h, rng);
    channel_bn = BatchNormParams<T>(channels_, T{0});
    reduce_bn = BatchNormParams<T>(h);
    dilated1_bn = BatchNormParams<T>(h);
    dilated2_bn = BatchNormParams<T>(h);
    spatial_bn = BatchNormParams<T>(1, T{0});
}

template <typename T>
void BamParams<T>::for_each_parameter(const std::function<void(const std::string&, Parameter<T>&)>& fn) {
    fn("channel.fc1.weight", fc1_weight);
    fn("channel.fc1.bias", fc1_bias);
    fn("channel.fc2.weight", fc2_weight);
    fn("channel.bn.gamma", channel_bn.gamma);
    fn("channel.bn.beta", channel_bn.beta);
    fn("spatial.reduce.weight", reduce_weight);
    fn("spatial.reduce_bn.gamma", reduce_bn.gamma);
    fn("spatial.reduce_bn.beta", reduce_bn.beta);
    fn("spatial.dilated1.weight", dilated1_weight);
    fn("spatial.dilated1_bn.gamma", dilated1_bn.gamma);
    fn("spatial.dilated1_bn.beta", dilated1_bn.beta);
    fn("spatial.dilated2.weight", dilated2_weight);
    fn("spatial.dilated2_bn.gamma", dilated2_bn.gamma);
    fn("spatial.dilated2_bn.beta", dilated2_bn.beta);
    fn("spatial.project.weight", project_weight);
    fn("spatial.bn.gamma", spatial_bn.gamma);
    fn("spatial.bn.beta", spatial_bn.beta);
}

template <typename T>
void BamParams<T>::for_each_buffer(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    const std::pair<const char*, BatchNormParams<T>*> layers[] = {
        {"channel.bn", &channel_bn},        {"spatial.reduce_bn", &reduce_bn}, {"spatial.dilated1_bn", &dilated1_bn},
        {"spatial.dilated2_bn", &dilated2_bn}, {"spatial.bn", &spatial_bn},
    };
    for (auto [name, bn] : layers) {
        fn(std::string(name) + ".running_mean", bn->running_mean);
        fn(std::string(name) + ".running_var", bn->running_var);
    }
}

template <typename T>
std::size_t BamParams<T>::parameter_count() {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, Parameter<T>& p) { n += p.value.numel(); });
    return n;
}

std::size_t bam_parameter_count(std::size_t channels, std::size_t reduction) {
    return BamParams<double>(channels, reduction, 1).parameter_count();
}

namespace {

void require_channels(const Shape& s, std::size_t channels, const char* what) {
    if (s.size() != 4 || s[1] != channels) {
        throw ShapeError(std::string(what) + ": feature map " + shape_str(s) + " does not have " +
                         std::to_string(channels) + " channels");
    }
}

}  // namespace

template <typename T>
Var<T> channel_gate(Var<T> features, BamParams<T>& params, Mode mode) {
    require_channels(features.shape(), params.channels(), "channel_gate");
    Tape<T>& tape = *features.tape;
    const std::size_t n = features.shape()[0];
    auto pooled = reshape(global_avg_pool(features), {n, params.channels()});
    auto hidden = relu(dense(pooled, tape.param(params.fc1_weight), std::optional(tape.param(params.fc1_bias))));
    auto expanded = dense(hidden, tape.param(params.fc2_weight), std::nullopt);
    auto normed = params.channel_bn.apply(tape, expanded, mode);
    return reshape(normed, {n, params.channels(), 1, 1});
}

template <typename T>
Var<T> spatial_gate(Var<T> features, BamParams<T>& params, Mode mode) {
    require_channels(features.shape(), params.channels(), "spatial_gate");
    Tape<T>& tape = *features.tape;
    const Conv2dOptions pointwise{};
    const Conv2dOptions dilated{1, params.dilation(), params.dilation()};
    auto x = conv2d(features, tape.param(params.reduce_weight), std::nullopt, pointwise);
    x = relu(params.reduce_bn.apply(tape, x, mode));
    x = conv2d(x, tape.param(params.dilated1_weight), std::nullopt, dilated);
    x = relu(params.dilated1_bn.apply(tape, x, mode));
    x = conv2d(x, tape.param(params.dilated2_weight), std::nullopt, dilated);
    x = relu(params.dilated2_bn.apply(tape, x, mode));
    x = conv2d(x, tape.param(params.project_weight), std::nullopt, pointwise);
    return params.spatial_bn.apply(tape, x, mode);
}

template <typename T>
Var<T> attention_map(Var<T> features, BamParams<T>& params, Mode mode) {
    auto ch = channel_gate(features, params, mode);
    auto sp = spatial_gate(features, params, mode);
    return sigmoid(broadcast_gate_sum(ch, sp));
}

template <typename T>
Var<T> bam_refine(Var<T> features, BamParams<T>& params, Mode mode) {
    auto m = attention_map(features, params, mode);
    return add(features, mul(features, m));
}

template class BamParams<float>;
template class BamParams<double>;

#define BAMNET_INSTANTIATE_BAM(T)                                      \
    template Var<T> channel_gate<T>(Var<T>, BamParams<T>&, Mode);      \
    template Var<T> spatial_gate<T>(Var<T>, BamParams<T>&, Mode);      \
    template Var<T> attention_map<T>(Var<T>, BamParams<T>&, Mode);     \
    template Var<T> bam_refine<T>(Var<T>, BamParams<T>&, Mode);

BAMNET_INSTANTIATE_BAM(float)
BAMNET_INSTANTIATE_BAM(double)

}  // namespace bamnet
