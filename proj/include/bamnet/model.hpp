#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bamnet/autodiff.hpp"
#include "bamnet/bam.hpp"
#include "bamnet/ops.hpp"
#include "bamnet/tensor.hpp"
#include "bamnet/tensor_io.hpp"

namespace bamnet {

enum class LayerKind { Input, Conv, BatchNorm, Relu, MaxPool, GlobalAvgPool, Concat, Bam, Dense, Dropout };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// One node of the architecture graph. Fields a kind does not use stay at
/// their defaults. For Conv/Dense in/out are channels/features; for
/// BatchNorm and Bam both equal the channel count. For MaxPool `kernel` is
/// the window.
struct LayerNode {
    std::string name;
    LayerKind kind = LayerKind::Input;
    std::vector<std::string> inputs;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
    std::size_t reduction = 0;
    bool bias = false;
    bool fused_relu = false;
    double dropout = 0.0;

    friend bool operator==(const LayerNode&, const LayerNode&) = default;
};

class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Architecture graph. Nodes are stored in topological order; the first is
/// the sole input and the last is the sole output.
struct ModelSpec {
    std::string name = "bam-inception";
    std::array<std::size_t, 3> input_shape{3, 224, 224};
    std::size_t num_classes = 2;
    std::vector<LayerNode> nodes;
    std::array<std::string, 3> bottleneck_sites;
    std::string head_site;
    bool head_attached = false;

    [[nodiscard]] const LayerNode* find(const std::string& node_name) const;
    [[nodiscard]] const LayerNode& output() const { return nodes.back(); }
    /// Name of the Bam node consuming the site, or "" when unoccupied.
    [[nodiscard]] std::string attention_at(const std::string& site) const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Checks acyclicity, name uniqueness, site placement and channel chaining;
/// throws ModelError on the first violation.
void validate(const ModelSpec& spec);

/// Per-sample output shape of every node, in node order.
std::vector<Shape> infer_shapes(const ModelSpec& spec);

/// Compact Inception-style backbone: a stride-2 stem conv, then three stages
/// of {parallel 1x1 / 3x3 / double-3x3 / pool-project branches concatenated,
/// 2x2 stride-2 max pool}, then global average pooling. Stage s emits
/// width * 2^s channels. The concatenation of each stage is a bottleneck site.
ModelSpec build_backbone(std::size_t width, std::size_t channels_in, std::size_t input_extent = 224);

/// Splices an independently parameterized BAM after each bottleneck site.
ModelSpec insert_attention(const ModelSpec& spec, std::size_t reduction = 16, std::size_t dilation = 4);

struct HeadLayer {
    enum class Kind { Dense, BatchNorm, Dropout, Relu };
    Kind kind = Kind::Dense;
    std::size_t units = 0;
    bool bias = true;
    bool relu = false;
    double p = 0.0;
    /// Declared input width; 0 means "whatever the previous layer emits".
    std::size_t in_features = 0;

    static HeadLayer make_dense(std::size_t units, bool bias = true, bool relu = false) {
        return {Kind::Dense, units, bias, relu, 0.0, 0};
    }
    static HeadLayer make_batch_norm() { return {Kind::BatchNorm, 0, false, false, 0.0, 0}; }
    static HeadLayer make_dropout(double p) { return {Kind::Dropout, 0, false, false, p, 0}; }
    static HeadLayer make_relu() { return {Kind::Relu, 0, false, false, 0.0, 0}; }
};

struct HeadConfig {
    static constexpr std::size_t kLayerCount = 10;
    std::vector<HeadLayer> layers;
};

/// dense(512) bn relu dropout(0.3) dense(128) bn relu dropout(0.3)
/// dense(32)+relu dense(num_classes). Dense layers feeding a normalization
/// carry no bias.
HeadConfig default_head(std::size_t num_classes = 2);

/// Appends the head after the pooled features. Throws ModelError naming the
/// first layer index whose extents do not chain.
ModelSpec attach_head(const ModelSpec& spec, const HeadConfig& head);

/// Trainable scalar count derived from layer shapes alone.
std::size_t param_count(const ModelSpec& spec);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
/// FNV-1a over the canonical JSON text.
std::uint64_t architecture_hash(const ModelSpec& spec);

/// Parameters and normalization statistics for a ModelSpec, plus the graph
/// executor.
template <typename T>
class Model {
public:
    /// Replaces a node's output during forward; used for probing and
    /// instrumentation.
    using ForwardHook = std::function<Var<T>(const LayerNode&, Var<T>)>;

    explicit Model(ModelSpec spec, std::uint64_t seed = 0);

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }

    /// Re-draws all parameters. Each node's draw depends only on the seed
    /// and the node name, so splicing nodes leaves the others untouched.
    void initialize(std::uint64_t seed);

    Var<T> forward(Tape<T>& tape, Var<T> input, Mode mode, std::uint64_t dropout_seed = 0,
                   const ForwardHook& hook = nullptr);

    /// Eval-mode logits for a batch.
    Tensor<T> predict(const Tensor<T>& batch);

    [[nodiscard]] std::vector<std::pair<std::string, Parameter<T>*>> named_parameters();
    [[nodiscard]] std::vector<std::pair<std::string, Tensor<T>*>> named_buffers();
    [[nodiscard]] std::size_t parameter_count();

    void zero_grad();

    /// Parameters then buffers, each sorted by name.
    [[nodiscard]] NamedTensors state();
    /// Strict: every entry must exist with matching shape and dtype.
    void load_state(const NamedTensors& state);

    BamParams<T>& attention(const std::string& node_name) { return bams_.at(node_name); }

private:
    void check_input(const Shape& s) const;

    ModelSpec spec_;
    std::map<std::string, Parameter<T>> params_;
    std::map<std::string, BatchNormParams<T>> norms_;
    std::map<std::string, BamParams<T>> bams_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace bamnet
