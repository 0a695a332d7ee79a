#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tensor/param_store.hpp"
#include "tensor/tensor.hpp"

namespace rawdiff {

using NodeId = int;
using NamedTensors = std::map<std::string, Tensor>;

enum class OpKind {
    Input,
    Param,
    Conv2d,        // x[C,H,W], w[O,C,k,k] with k in {1,3}; stride 1, zero padding k/2
    Linear,        // w[out,in] applied to x[in] or x[in,n]
    BiasAdd,       // adds b[dim0] broadcast over the trailing dims of x
    Silu,
    GroupNorm,     // x[C,H,W], gamma[C], beta[C]
    Upsample2x,    // nearest
    Downsample2x,  // nearest (keeps even rows/cols)
    Concat,        // along dim 0
    Add,
    Mul,
    Scale,         // constant factor
    Mean,          // global mean -> [1]
    L1Loss,        // mean |a - b| -> [1]
};

const char* op_name(OpKind op);

struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    std::string name;  // input/param name, or a label for error messages
    Shape shape;
    int groups = 0;
    double factor = 1.0;
};

/// Static computation graph. Nodes are appended in topological order; shape
/// checks happen as each node is added.
class Graph {
public:
    NodeId input(const std::string& name, Shape shape);
    NodeId param(const std::string& name, Shape shape);

    NodeId conv2d(NodeId x, NodeId w, const std::string& label = {});
    NodeId linear(NodeId w, NodeId x, const std::string& label = {});
    NodeId bias_add(NodeId x, NodeId b, const std::string& label = {});
    NodeId silu(NodeId x, const std::string& label = {});
    NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, const std::string& label = {});
    NodeId upsample2x(NodeId x, const std::string& label = {});
    NodeId downsample2x(NodeId x, const std::string& label = {});
    NodeId concat(NodeId a, NodeId b, const std::string& label = {});
    NodeId add(NodeId a, NodeId b, const std::string& label = {});
    NodeId mul(NodeId a, NodeId b, const std::string& label = {});
    NodeId scale(NodeId x, double factor, const std::string& label = {});
    NodeId mean(NodeId x, const std::string& label = {});
    NodeId l1_loss(NodeId pred, NodeId target, const std::string& label = {});

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return nodes_.size(); }

    std::optional<NodeId> find_input(const std::string& name) const;
    std::optional<NodeId> find_param(const std::string& name) const;
    std::vector<std::string> input_names() const;
    std::vector<std::string> param_names() const;

    /// "node 7 (conv2d 'enc0.conv')"
    std::string describe(NodeId id) const;

private:
    NodeId push(Node node);
    const Node& checked(NodeId id) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> inputs_;
    std::map<std::string, NodeId> params_;
};

/// Forward values for every evaluated node. Input and parameter nodes refer
/// to the caller's tensors, which must outlive this object.
class Activations {
public:
    const Tensor& operator[](NodeId id) const { return *refs_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return refs_.size(); }

private:
    friend Activations eval_graph(const Graph&, const NamedTensors&, const ParamStore&, std::optional<NodeId>);
    std::vector<Tensor> owned_;
    std::vector<const Tensor*> refs_;
};

/// Evaluates nodes 0..stop_after (all nodes when unset). Throws on shape
/// mismatch or non-finite results, naming the offending node.
Activations eval_graph(const Graph& graph, const NamedTensors& inputs, const ParamStore& params,
                       std::optional<NodeId> stop_after = std::nullopt);

struct Gradients {
    std::map<std::string, Tensor> params;  // trainable parameters only
    std::map<std::string, Tensor> inputs;  // every graph input feeding the loss
    std::vector<NodeId> visited;           // reverse visit order
};

/// Reverse-mode pass from a scalar loss node. `seed` is dloss/dloss.
Gradients backprop(const Graph& graph, const Activations& acts, NodeId loss, const ParamStore& params,
                   double seed = 1.0, bool input_grads = true);

Gradients backprop(const Graph& graph, NodeId loss, const NamedTensors& inputs, const ParamStore& params);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

/// Central finite differences over every element of every trainable
/// parameter; relative error |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const Graph& graph, NodeId loss, const NamedTensors& inputs, const ParamStore& params,
                           double eps);

} // namespace rawdiff
