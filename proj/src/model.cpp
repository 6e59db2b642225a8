#include "bamnet/model.hpp"

#include <algorithm>
#include <set>

#include "bamnet/init.hpp"
#include "bamnet/random.hpp"

namespace bamnet {
namespace {

constexpr std::pair<LayerKind, const char*> kKindNames[] = {
    {LayerKind::Input, "input"},     {LayerKind::Conv, "conv"},
    {LayerKind::BatchNorm, "batch_norm"}, {LayerKind::Relu, "relu"},
    {LayerKind::MaxPool, "max_pool"}, {LayerKind::GlobalAvgPool, "global_avg_pool"},
    {LayerKind::Concat, "concat"},   {LayerKind::Bam, "bam"},
    {LayerKind::Dense, "dense"},     {LayerKind::Dropout, "dropout"},
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool is_downsampling(const LayerNode& n) { return n.kind == LayerKind::MaxPool && n.stride >= 2; }

class SpecBuilder {
public:
    explicit SpecBuilder(ModelSpec& spec) : spec_(spec) {}

    std::string add(LayerNode node) {
        spec_.nodes.push_back(std::move(node));
        return spec_.nodes.back().name;
    }

    std::string conv_bn_relu(const std::string& name, const std::string& input, std::size_t in, std::size_t out,
                             std::size_t kernel, std::size_t stride = 1) {
        LayerNode conv{.name = name + ".conv", .kind = LayerKind::Conv, .inputs = {input}};
        conv.in_channels = in;
        conv.out_channels = out;
        conv.kernel = kernel;
        conv.stride = stride;
        conv.padding = kernel / 2;
        add(conv);
        LayerNode bn{.name = name + ".bn", .kind = LayerKind::BatchNorm, .inputs = {conv.name}};
        bn.in_channels = bn.out_channels = out;
        add(bn);
        return add(LayerNode{.name = name + ".relu", .kind = LayerKind::Relu, .inputs = {bn.name}});
    }

private:
    ModelSpec& spec_;
};

}  // namespace

std::string to_string(LayerKind kind) {
    for (auto [k, n] : kKindNames)
        if (k == kind) return n;
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& s) {
    for (auto [k, n] : kKindNames)
        if (s == n) return k;
    throw ModelError("unknown layer kind '" + s + "'");
}

const LayerNode* ModelSpec::find(const std::string& node_name) const {
    for (const auto& n : nodes)
        if (n.name == node_name) return &n;
    return nullptr;
}

std::string ModelSpec::attention_at(const std::string& site) const {
    for (const auto& n : nodes)
        if (n.kind == LayerKind::Bam && n.inputs.size() == 1 && n.inputs[0] == site) return n.name;
    return "";
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
    std::map<std::string, std::size_t> index;
    std::vector<Shape> shapes;
    shapes.reserve(spec.nodes.size());
    auto fail = [](const LayerNode& n, const std::string& msg) {
        throw ModelError("layer '" + n.name + "': " + msg);
    };
    for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
        const LayerNode& n = spec.nodes[i];
        if (index.count(n.name)) fail(n, "duplicate layer name");
        std::vector<const Shape*> in;
        for (const auto& src : n.inputs) {
            auto it = index.find(src);
            if (it == index.end()) fail(n, "input '" + src + "' is not defined before use");
            in.push_back(&shapes[it->second]);
        }
        const bool needs_one = n.kind != LayerKind::Input && n.kind != LayerKind::Concat;
        if (needs_one && in.size() != 1) fail(n, "expects exactly one input");
        if (n.kind == LayerKind::Input && (!in.empty() || i != 0)) fail(n, "input layer must come first with no inputs");
        if (n.kind != LayerKind::Input && i == 0) fail(n, "first layer must be the input");

        auto spatial = [&](std::size_t want_rank) -> const Shape& {
            if (in[0]->size() != want_rank) fail(n, "unexpected input shape " + shape_str(*in[0]));
            return *in[0];
        };
        Shape out;
        switch (n.kind) {
            case LayerKind::Input:
                out = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
                break;
            case LayerKind::Conv: {
                const Shape& s = spatial(3);
                if (s[0] != n.in_channels) fail(n, "expects " + std::to_string(n.in_channels) + " channels, got " + shape_str(s));
                const Conv2dOptions opt{n.stride, n.padding, n.dilation};
                out = {n.out_channels, conv_output_extent(s[1], n.kernel, opt), conv_output_extent(s[2], n.kernel, opt)};
                break;
            }
            case LayerKind::BatchNorm:
                if ((*in[0])[0] != n.in_channels) fail(n, "expects " + std::to_string(n.in_channels) + " channels, got " + shape_str(*in[0]));
                out = *in[0];
                break;
            case LayerKind::Relu:
            case LayerKind::Dropout:
                out = *in[0];
                break;
            case LayerKind::MaxPool: {
                const Shape& s = spatial(3);
                if (n.kernel > s[1] + 2 * n.padding || n.kernel > s[2] + 2 * n.padding) fail(n, "pool window larger than input");
                out = {s[0], (s[1] + 2 * n.padding - n.kernel) / n.stride + 1, (s[2] + 2 * n.padding - n.kernel) / n.stride + 1};
                break;
            }
            case LayerKind::GlobalAvgPool:
                out = {spatial(3)[0]};
                break;
            case LayerKind::Concat: {
                if (in.empty()) fail(n, "concat needs inputs");
                out = *in[0];
                if (out.size() != 3) fail(n, "concat expects feature maps");
                out[0] = 0;
                for (const Shape* s : in) {
                    if (s->size() != 3 || (*s)[1] != (*in[0])[1] || (*s)[2] != (*in[0])[2]) fail(n, "concat spatial mismatch");
                    out[0] += (*s)[0];
                }
                break;
            }
            case LayerKind::Bam: {
                const Shape& s = spatial(3);
                if (s[0] != n.in_channels) fail(n, "expects " + std::to_string(n.in_channels) + " channels, got " + shape_str(s));
                if (n.reduction == 0 || s[0] % n.reduction != 0) fail(n, "channel count not divisible by reduction ratio");
                out = s;
                break;
            }
            case LayerKind::Dense: {
                const Shape& s = spatial(1);
                if (s[0] != n.in_channels) fail(n, "expects " + std::to_string(n.in_channels) + " features, got " + shape_str(s));
                out = {n.out_channels};
                break;
            }
        }
        index[n.name] = i;
        shapes.push_back(std::move(out));
    }
    return shapes;
}

void validate(const ModelSpec& spec) {
    if (spec.nodes.empty()) throw ModelError("model has no layers");
    const auto shapes = infer_shapes(spec);

    std::map<std::string, std::size_t> consumers;
    for (const auto& n : spec.nodes)
        for (const auto& src : n.inputs) ++consumers[src];
    for (std::size_t i = 0; i + 1 < spec.nodes.size(); ++i) {
        if (!consumers.count(spec.nodes[i].name)) {
            throw ModelError("layer '" + spec.nodes[i].name + "' is unused; the graph must have a single output");
        }
    }

    std::set<std::string> sites;
    for (const auto& site : spec.bottleneck_sites) {
        if (!spec.find(site)) throw ModelError("bottleneck site '" + site + "' is not a layer");
        if (!sites.insert(site).second) throw ModelError("bottleneck site '" + site + "' listed twice");
        const std::string bam = spec.attention_at(site);
        const std::string feeding = bam.empty() ? site : bam;
        bool downsampled = false;
        for (const auto& n : spec.nodes) {
            if (std::find(n.inputs.begin(), n.inputs.end(), feeding) != n.inputs.end()) {
                if (!is_downsampling(n)) throw ModelError("bottleneck site '" + site + "' feeds non-downsampling layer '" + n.name + "'");
                downsampled = true;
            }
        }
        if (!downsampled) throw ModelError("bottleneck site '" + site + "' does not precede a downsampling layer");
    }
    if (!spec.find(spec.head_site)) throw ModelError("head site '" + spec.head_site + "' is not a layer");

    std::set<std::string> param_names;
    for (const auto& n : spec.nodes) {
        if (!param_names.insert(n.name).second) throw ModelError("duplicate layer name '" + n.name + "'");
    }
    if (spec.head_attached && shapes.back() != Shape{spec.num_classes}) {
        throw ModelError("model output " + shape_str(shapes.back()) + " does not match " + std::to_string(spec.num_classes) + " classes");
    }
}

ModelSpec build_backbone(std::size_t width, std::size_t channels_in, std::size_t input_extent) {
    if (width < 8 || width % 4 != 0) {
        throw ModelError("backbone width must be at least 8 and divisible by 4, got " + std::to_string(width));
    }
    if (channels_in == 0) throw ModelError("input channel count must be positive");
    ModelSpec spec;
    spec.input_shape = {channels_in, input_extent, input_extent};
    SpecBuilder b(spec);
    std::string x = b.add(LayerNode{.name = "input", .kind = LayerKind::Input, .inputs = {}});
    x = b.conv_bn_relu("stem", x, channels_in, width, 3, 2);

    std::size_t in = width;
    for (std::size_t stage = 1; stage <= 3; ++stage) {
        const std::string p = "stage" + std::to_string(stage);
        const std::size_t out = width << stage;
        const std::size_t br = out / 4;
        const std::string b1 = b.conv_bn_relu(p + ".b1", x, in, br, 1);
        std::string b2 = b.conv_bn_relu(p + ".b2a", x, in, br, 1);
        b2 = b.conv_bn_relu(p + ".b2b", b2, br, br, 3);
        std::string b3 = b.conv_bn_relu(p + ".b3a", x, in, br, 1);
        b3 = b.conv_bn_relu(p + ".b3b", b3, br, br, 3);
        b3 = b.conv_bn_relu(p + ".b3c", b3, br, br, 3);
        LayerNode pool{.name = p + ".b4.pool", .kind = LayerKind::MaxPool, .inputs = {x}};
        pool.kernel = 3;
        pool.stride = 1;
        pool.padding = 1;
        const std::string b4 = b.conv_bn_relu(p + ".b4", b.add(pool), in, br, 1);
        const std::string cat = b.add(LayerNode{.name = p + ".concat", .kind = LayerKind::Concat, .inputs = {b1, b2, b3, b4}});
        spec.bottleneck_sites[stage - 1] = cat;
        LayerNode down{.name = p + ".down", .kind = LayerKind::MaxPool, .inputs = {cat}};
        down.kernel = 2;
        down.stride = 2;
        x = b.add(down);
        in = out;
    }
    spec.head_site = b.add(LayerNode{.name = "gap", .kind = LayerKind::GlobalAvgPool, .inputs = {x}});
    validate(spec);
    return spec;
}

ModelSpec insert_attention(const ModelSpec& spec, std::size_t reduction, std::size_t dilation) {
    if (reduction == 0 || dilation == 0) throw ModelError("reduction ratio and dilation must be positive");
    const auto shapes = infer_shapes(spec);
    ModelSpec out = spec;
    for (std::size_t s = 0; s < spec.bottleneck_sites.size(); ++s) {
        const std::string& site = spec.bottleneck_sites[s];
        if (!spec.attention_at(site).empty()) {
            throw ModelError("bottleneck site '" + site + "' already holds an attention module");
        }
    }
    for (const auto& site : spec.bottleneck_sites) {
        auto it = std::find_if(out.nodes.begin(), out.nodes.end(), [&](const LayerNode& n) { return n.name == site; });
        const std::size_t pos = static_cast<std::size_t>(it - out.nodes.begin());
        const std::size_t channels = shapes[static_cast<std::size_t>(
            std::find_if(spec.nodes.begin(), spec.nodes.end(), [&](const LayerNode& n) { return n.name == site; }) -
            spec.nodes.begin())][0];
        if (channels % reduction != 0) {
            throw ModelError("bottleneck site '" + site + "' has " + std::to_string(channels) +
                             " channels, not divisible by reduction ratio " + std::to_string(reduction));
        }
        std::string stem = site;
        if (auto dot = stem.rfind('.'); dot != std::string::npos) stem = stem.substr(0, dot);
        LayerNode bam{.name = stem + ".bam", .kind = LayerKind::Bam, .inputs = {site}};
        bam.in_channels = bam.out_channels = channels;
        bam.reduction = reduction;
        bam.dilation = dilation;
        for (auto& n : out.nodes)
            for (auto& src : n.inputs)
                if (src == site) src = bam.name;
        out.nodes.insert(out.nodes.begin() + static_cast<std::ptrdiff_t>(pos) + 1, bam);
    }
    validate(out);
    return out;
}

HeadConfig default_head(std::size_t num_classes) {
    using L = HeadLayer;
    return HeadConfig{{
        L::make_dense(512, false), L::make_batch_norm(), L::make_relu(), L::make_dropout(0.3),
        L::make_dense(128, false), L::make_batch_norm(), L::make_relu(), L::make_dropout(0.3),
        L::make_dense(32, true, true), L::make_dense(num_classes),
    }};
}

ModelSpec attach_head(const ModelSpec& spec, const HeadConfig& head) {
    if (spec.head_attached) throw ModelError("head site '" + spec.head_site + "' is already occupied");
    if (head.layers.size() != HeadConfig::kLayerCount) {
        throw ModelError("head must have exactly " + std::to_string(HeadConfig::kLayerCount) + " layers, got " +
                         std::to_string(head.layers.size()));
    }
    const auto shapes = infer_shapes(spec);
    if (spec.output().name != spec.head_site) throw ModelError("head site '" + spec.head_site + "' is not the model output");
    if (shapes.back().size() != 1) throw ModelError("head site does not emit pooled features");

    ModelSpec out = spec;
    std::size_t width = shapes.back()[0];
    std::string prev = spec.head_site;
    for (std::size_t i = 0; i < head.layers.size(); ++i) {
        const HeadLayer& h = head.layers[i];
        const std::string name = "head." + std::to_string(i);
        auto mismatch = [&](const std::string& why) {
            return ModelError("head layer " + std::to_string(i) + ": " + why);
        };
        if (h.in_features != 0 && h.in_features != width) {
            throw mismatch("declared input width " + std::to_string(h.in_features) + " but receives " + std::to_string(width));
        }
        LayerNode n{.name = name, .inputs = {prev}};
        switch (h.kind) {
            case HeadLayer::Kind::Dense:
                if (h.units == 0) throw mismatch("dense layer needs a positive width");
                n.kind = LayerKind::Dense;
                n.in_channels = width;
                n.out_channels = h.units;
                n.bias = h.bias;
                n.fused_relu = h.relu;
                width = h.units;
                break;
            case HeadLayer::Kind::BatchNorm:
                n.kind = LayerKind::BatchNorm;
                n.in_channels = n.out_channels = width;
                break;
            case HeadLayer::Kind::Dropout:
                if (h.p < 0.0 || h.p >= 1.0) throw mismatch("dropout rate must lie in [0, 1)");
                n.kind = LayerKind::Dropout;
                n.dropout = h.p;
                break;
            case HeadLayer::Kind::Relu:
                n.kind = LayerKind::Relu;
                break;
        }
        if (i + 1 == head.layers.size()) {
            if (h.kind != HeadLayer::Kind::Dense || h.relu) throw mismatch("final layer must be the classifier dense layer");
            if (h.units != spec.num_classes) {
                throw mismatch("classifier emits " + std::to_string(h.units) + " logits, need " + std::to_string(spec.num_classes));
            }
        }
        out.nodes.push_back(n);
        prev = name;
    }
    out.head_attached = true;
    validate(out);
    return out;
}

std::size_t param_count(const ModelSpec& spec) {
    std::size_t total = 0;
    for (const auto& n : spec.nodes) {
        switch (n.kind) {
            case LayerKind::Conv:
                total += n.out_channels * n.in_channels * n.kernel * n.kernel + (n.bias ? n.out_channels : 0);
                break;
            case LayerKind::Dense:
                total += n.in_channels * n.out_channels + (n.bias ? n.out_channels : 0);
                break;
            case LayerKind::BatchNorm:
                total += 2 * n.in_channels;
                break;
            case LayerKind::Bam:
                total += bam_parameter_count(n.in_channels, n.reduction);
                break;
            default:
                break;
        }
    }
    return total;
}

nlohmann::json to_json(const ModelSpec& spec) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : spec.nodes) {
        nodes.push_back({{"name", n.name},
                         {"kind", to_string(n.kind)},
                         {"inputs", n.inputs},
                         {"in", n.in_channels},
                         {"out", n.out_channels},
                         {"kernel", n.kernel},
                         {"stride", n.stride},
                         {"padding", n.padding},
                         {"dilation", n.dilation},
                         {"reduction", n.reduction},
                         {"bias", n.bias},
                         {"fused_relu", n.fused_relu},
                         {"dropout", n.dropout}});
    }
    return {{"name", spec.name},
            {"input_shape", spec.input_shape},
            {"num_classes", spec.num_classes},
            {"bottleneck_sites", spec.bottleneck_sites},
            {"head_site", spec.head_site},
            {"head_attached", spec.head_attached},
            {"nodes", nodes}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    try {
        spec.name = j.at("name").get<std::string>();
        spec.input_shape = j.at("input_shape").get<std::array<std::size_t, 3>>();
        spec.num_classes = j.at("num_classes").get<std::size_t>();
        spec.bottleneck_sites = j.at("bottleneck_sites").get<std::array<std::string, 3>>();
        spec.head_site = j.at("head_site").get<std::string>();
        spec.head_attached = j.at("head_attached").get<bool>();
        for (const auto& jn : j.at("nodes")) {
            LayerNode n;
            n.name = jn.at("name").get<std::string>();
            n.kind = layer_kind_from_string(jn.at("kind").get<std::string>());
            n.inputs = jn.at("inputs").get<std::vector<std::string>>();
            n.in_channels = jn.at("in").get<std::size_t>();
            n.out_channels = jn.at("out").get<std::size_t>();
            n.kernel = jn.at("kernel").get<std::size_t>();
            n.stride = jn.at("stride").get<std::size_t>();
            n.padding = jn.at("padding").get<std::size_t>();
            n.dilation = jn.at("dilation").get<std::size_t>();
            n.reduction = jn.at("reduction").get<std::size_t>();
            n.bias = jn.at("bias").get<bool>();
            n.fused_relu = jn.at("fused_relu").get<bool>();
            n.dropout = jn.at("dropout").get<double>();
            spec.nodes.push_back(std::move(n));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("malformed model description: ") + e.what());
    }
    validate(spec);
    return spec;
}

std::uint64_t architecture_hash(const ModelSpec& spec) { return fnv1a(to_json(spec).dump()); }

// ---------------------------------------------------------------------------

template <typename T>
Model<T>::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    validate(spec_);
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i) {
        const LayerNode& n = spec_.nodes[i];
        index_[n.name] = i;
        switch (n.kind) {
            case LayerKind::Conv:
                params_.emplace(n.name + ".weight", Parameter<T>(Tensor<T>({n.out_channels, n.in_channels, n.kernel, n.kernel})));
                if (n.bias) params_.emplace(n.name + ".bias", Parameter<T>(Tensor<T>({n.out_channels})));
                break;
            case LayerKind::Dense:
                params_.emplace(n.name + ".weight", Parameter<T>(Tensor<T>({n.in_channels, n.out_channels})));
                if (n.bias) params_.emplace(n.name + ".bias", Parameter<T>(Tensor<T>({n.out_channels})));
                break;
            case LayerKind::BatchNorm:
                norms_.emplace(n.name, BatchNormParams<T>(n.in_channels));
                break;
            case LayerKind::Bam:
                bams_.emplace(n.name, BamParams<T>(n.in_channels, n.reduction, n.dilation));
                break;
            default:
                break;
        }
    }
    initialize(seed);
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
    for (const auto& n : spec_.nodes) {
        Rng rng(mix_seed(seed, fnv1a(n.name)));
        switch (n.kind) {
            case LayerKind::Conv:
                kaiming_uniform(params_.at(n.name + ".weight").value, n.in_channels * n.kernel * n.kernel, rng);
                if (n.bias) params_.at(n.name + ".bias").value.fill(T{0});
                break;
            case LayerKind::Dense:
                kaiming_uniform(params_.at(n.name + ".weight").value, n.in_channels, rng);
                if (n.bias) params_.at(n.name + ".bias").value.fill(T{0});
                break;
            case LayerKind::BatchNorm:
                norms_.at(n.name) = BatchNormParams<T>(n.in_channels);
                break;
            case LayerKind::Bam:
                bams_.at(n.name).initialize(rng);
                break;
            default:
                break;
        }
    }
    zero_grad();
}

template <typename T>
void Model<T>::check_input(const Shape& s) const {
    const auto& in = spec_.input_shape;
    if (s.size() != 4 || s[1] != in[0] || s[2] != in[1] || s[3] != in[2]) {
        throw ShapeError("model expects batches of N x " + std::to_string(in[0]) + " x " + std::to_string(in[1]) + " x " +
                         std::to_string(in[2]) + ", got " + shape_str(s));
    }
}

template <typename T>
Var<T> Model<T>::forward(Tape<T>& tape, Var<T> input, Mode mode, std::uint64_t dropout_seed, const ForwardHook& hook) {
    check_input(input.shape());
    std::vector<Var<T>> out(spec_.nodes.size());
    std::vector<Var<T>> args;
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i) {
        const LayerNode& n = spec_.nodes[i];
        args.clear();
        for (const auto& src : n.inputs) args.push_back(out[index_.at(src)]);
        Var<T> y;
        switch (n.kind) {
            case LayerKind::Input:
                y = input;
                break;
            case LayerKind::Conv: {
                std::optional<Var<T>> bias;
                if (n.bias) bias = tape.param(params_.at(n.name + ".bias"));
                y = conv2d(args[0], tape.param(params_.at(n.name + ".weight")), bias,
                           Conv2dOptions{n.stride, n.padding, n.dilation});
                break;
            }
            case LayerKind::BatchNorm:
                y = norms_.at(n.name).apply(tape, args[0], mode);
                break;
            case LayerKind::Relu:
                y = relu(args[0]);
                break;
            case LayerKind::MaxPool:
                y = max_pool2d(args[0], n.kernel, n.stride, n.padding);
                break;
            case LayerKind::GlobalAvgPool: {
                const Shape& s = args[0].shape();
                y = reshape(global_avg_pool(args[0]), {s[0], s[1]});
                break;
            }
            case LayerKind::Concat:
                y = concat_channels(std::span<const Var<T>>(args));
                break;
            case LayerKind::Bam:
                y = bam_refine(args[0], bams_.at(n.name), mode);
                break;
            case LayerKind::Dense: {
                std::optional<Var<T>> bias;
                if (n.bias) bias = tape.param(params_.at(n.name + ".bias"));
                y = dense(args[0], tape.param(params_.at(n.name + ".weight")), bias);
                if (n.fused_relu) y = relu(y);
                break;
            }
            case LayerKind::Dropout:
                y = dropout(args[0], n.dropout, mix_seed(dropout_seed, fnv1a(n.name)), mode);
                break;
        }
        if (hook) y = hook(n, y);
        out[i] = y;
    }
    return out.back();
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& batch) {
    Tape<T> tape;
    auto x = tape.leaf(batch, false);
    return forward(tape, x, Mode::Eval).value();
}

template <typename T>
std::vector<std::pair<std::string, Parameter<T>*>> Model<T>::named_parameters() {
    std::vector<std::pair<std::string, Parameter<T>*>> out;
    for (auto& [name, p] : params_) out.emplace_back(name, &p);
    for (auto& [name, bn] : norms_) {
        out.emplace_back(name + ".gamma", &bn.gamma);
        out.emplace_back(name + ".beta", &bn.beta);
    }
    for (auto& [name, bam] : bams_) {
        bam.for_each_parameter([&, prefix = name](const std::string& local, Parameter<T>& p) {
            out.emplace_back(prefix + "." + local, &p);
        });
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::named_buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& [name, bn] : norms_) {
        out.emplace_back(name + ".running_mean", &bn.running_mean);
        out.emplace_back(name + ".running_var", &bn.running_var);
    }
    for (auto& [name, bam] : bams_) {
        bam.for_each_buffer([&, prefix = name](const std::string& local, Tensor<T>& t) {
            out.emplace_back(prefix + "." + local, &t);
        });
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() {
    std::size_t n = 0;
    for (auto& [name, p] : named_parameters()) n += p->value.numel();
    return n;
}

template <typename T>
void Model<T>::zero_grad() {
    for (auto& [name, p] : named_parameters()) p->zero_grad();
}

template <typename T>
NamedTensors Model<T>::state() {
    NamedTensors out;
    for (auto& [name, p] : named_parameters()) out.emplace_back(name, p->value);
    for (auto& [name, b] : named_buffers()) out.emplace_back(name, *b);
    return out;
}

template <typename T>
void Model<T>::load_state(const NamedTensors& state) {
    std::map<std::string, Tensor<T>*> slots;
    for (auto& [name, p] : named_parameters()) slots[name] = &p->value;
    for (auto& [name, b] : named_buffers()) slots[name] = b;
    std::set<std::string> seen;
    for (const auto& [name, any] : state) {
        auto it = slots.find(name);
        if (it == slots.end()) throw ModelError("checkpoint entry '" + name + "' does not belong to this model");
        Tensor<T> t = expect_dtype<T>(any, name);
        require_same_shape(it->second->shape(), t.shape(), name.c_str());
        *it->second = std::move(t);
        seen.insert(name);
    }
    if (seen.size() != slots.size()) {
        for (const auto& [name, slot] : slots)
            if (!seen.count(name)) throw ModelError("checkpoint is missing '" + name + "'");
    }
}

template class Model<float>;
template class Model<double>;

}  // namespace bamnet
