#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bamnet/random.hpp"
#include "bamnet/tensor.hpp"

namespace bamnet {

/// A trainable tensor with its accumulated gradient. The gradient buffer is
/// allocated on first accumulation and always has the value's shape.
template <typename T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    explicit Parameter(Tensor<T> v) : value(std::move(v)) {}

    void zero_grad() { grad = Tensor<T>(); }

    void accumulate(const Tensor<T>& g) {
        require_same_shape(value.shape(), g.shape(), "parameter gradient");
        if (grad.empty()) {
            grad = g;
            return;
        }
        auto dst = grad.data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
};

class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Tensor<T>& value() const { return tape->value(id); }
    [[nodiscard]] const Shape& shape() const { return tape->value(id).shape(); }
};

/// Records operations in execution order (which is a topological order) and
/// replays them in reverse on backward(). One tape serves exactly one
/// backward pass.
template <typename T>
class Tape {
public:
    /// Receives the gradient of the node's output; accumulates into inputs
    /// through Tape::grad_buffer.
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.is_leaf = true;
        return push(std::move(n));
    }

    /// Leaf bound to a parameter; backward() accumulates into param.grad.
    Var<T> param(Parameter<T>& p) {
        Node n;
        n.value = p.value;
        n.requires_grad = true;
        n.is_leaf = true;
        n.parameter = &p;
        return push(std::move(n));
    }

    Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
        Node n;
        n.value = std::move(value);
        for (auto id : inputs) {
            check_id(id);
            n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
        }
        n.inputs = std::move(inputs);
        if (n.requires_grad) n.backward = std::move(fn);
        return push(std::move(n));
    }

    [[nodiscard]] const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] bool consumed() const { return consumed_; }

    /// Folds a discrete forward decision (activation sign pattern, pooling
    /// winner) into a running signature. Two passes with equal signatures
    /// took the same smooth branch of a piecewise-smooth graph.
    /// Recording is off by default; it costs a hash per activation.
    void note_branch(std::uint64_t decision) { signature_ = mix_seed(signature_, decision); }
    void track_branches(bool on) { track_branches_ = on; }
    [[nodiscard]] bool tracks_branches() const { return track_branches_; }
    [[nodiscard]] std::uint64_t branch_signature() const { return signature_; }

    /// Gradient accumulator for node `id`, zero-filled on first use.
    Tensor<T>& grad_buffer(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    /// Gradient of a leaf after backward(); empty if nothing flowed into it.
    [[nodiscard]] const Tensor<T>& grad(Var<T> v) const { return nodes_.at(v.id).grad; }

    void backward(Var<T> loss) {
        if (consumed_) throw GraphError("backward called twice on the same graph");
        check_id(loss.id);
        if (nodes_[loss.id].value.numel() != 1) {
            throw GraphError("backward requires a scalar loss, got shape " + shape_str(nodes_[loss.id].value.shape()));
        }
        consumed_ = true;
        grad_buffer(loss.id).fill(T{1});
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty() || !n.requires_grad) continue;
            if (n.is_leaf) {
                if (n.parameter != nullptr) n.parameter->accumulate(n.grad);
                continue;
            }
            n.backward(*this, n.grad);
            n.grad = Tensor<T>();
            n.backward = nullptr;
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter<T>* parameter = nullptr;
        bool requires_grad = false;
        bool is_leaf = false;
    };

    Var<T> push(Node n) {
        if (consumed_) throw GraphError("cannot record onto a consumed graph");
        nodes_.push_back(std::move(n));
        return Var<T>{this, nodes_.size() - 1};
    }

    void check_id(std::size_t id) const {
        if (id >= nodes_.size()) throw GraphError("node id " + std::to_string(id) + " is not on this tape");
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
    std::uint64_t signature_ = 0;
    bool track_branches_ = false;
};

}  // namespace bamnet
