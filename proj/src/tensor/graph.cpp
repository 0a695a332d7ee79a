#include "tensor/graph.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"
#include "tensor/kernels.hpp"

namespace rawdiff {

const char* op_name(OpKind op) {
    switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Linear: return "linear";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::Silu: return "silu";
    case OpKind::GroupNorm: return "group_norm";
    case OpKind::Upsample2x: return "upsample2x";
    case OpKind::Downsample2x: return "downsample2x";
    case OpKind::Concat: return "concat";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Mean: return "mean";
    case OpKind::L1Loss: return "l1_loss";
    }
    return "?";
}

std::string Graph::describe(NodeId id) const {
    const auto& n = node(id);
    std::string s = "node " + std::to_string(id) + " (" + op_name(n.op);
    if (!n.name.empty())
        s += " '" + n.name + "'";
    return s + ")";
}

const Node& Graph::checked(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw UsageError("graph: node id " + std::to_string(id) + " does not exist");
    return nodes_[static_cast<std::size_t>(id)];
}

NodeId Graph::push(Node node) {
    for (auto in : node.inputs)
        checked(in);
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(const std::string& name, Shape shape) {
    if (inputs_.count(name) || params_.count(name))
        throw UsageError("graph: duplicate name '" + name + "'");
    const auto id = push({OpKind::Input, {}, name, std::move(shape)});
    inputs_[name] = id;
    return id;
}

NodeId Graph::param(const std::string& name, Shape shape) {
    if (auto it = params_.find(name); it != params_.end()) {
        if (node(it->second).shape != shape)
            throw UsageError("graph: parameter '" + name + "' redeclared with a different shape");
        return it->second;
    }
    if (inputs_.count(name))
        throw UsageError("graph: duplicate name '" + name + "'");
    const auto id = push({OpKind::Param, {}, name, std::move(shape)});
    params_[name] = id;
    return id;
}

namespace {
[[noreturn]] void shape_error(const std::string& op, const std::string& label, const std::string& detail) {
    throw UsageError("graph: " + op + (label.empty() ? "" : " '" + label + "'") + ": " + detail);
}
} // namespace

NodeId Graph::conv2d(NodeId x, NodeId w, const std::string& label) {
    const auto& xs = checked(x).shape;
    const auto& ws = checked(w).shape;
    if (xs.size() != 3 || ws.size() != 4)
        shape_error("conv2d", label, "expects x[C,H,W] and w[O,C,k,k], got " + shape_string(xs) + ", " + shape_string(ws));
    if (ws[1] != xs[0])
        shape_error("conv2d", label, "input channels " + std::to_string(xs[0]) + " vs kernel " + shape_string(ws));
    if (ws[2] != ws[3] || (ws[2] != 1 && ws[2] != 3))
        shape_error("conv2d", label, "kernel must be 1x1 or 3x3, got " + shape_string(ws));
    return push({OpKind::Conv2d, {x, w}, label, {ws[0], xs[1], xs[2]}});
}

NodeId Graph::linear(NodeId w, NodeId x, const std::string& label) {
    const auto& xs = checked(x).shape;
    const auto& ws = checked(w).shape;
    if (ws.size() != 2 || (xs.size() != 1 && xs.size() != 2) || ws[1] != xs[0])
        shape_error("linear", label, "w " + shape_string(ws) + " cannot multiply x " + shape_string(xs));
    Shape out = xs.size() == 2 ? Shape{ws[0], xs[1]} : Shape{ws[0]};
    return push({OpKind::Linear, {w, x}, label, std::move(out)});
}

NodeId Graph::bias_add(NodeId x, NodeId b, const std::string& label) {
    const auto& xs = checked(x).shape;
    const auto& bs = checked(b).shape;
    if (bs.size() != 1 || bs[0] != xs[0])
        shape_error("bias_add", label, "bias " + shape_string(bs) + " does not match leading dim of " + shape_string(xs));
    return push({OpKind::BiasAdd, {x, b}, label, xs});
}

NodeId Graph::silu(NodeId x, const std::string& label) {
    return push({OpKind::Silu, {x}, label, checked(x).shape});
}

NodeId Graph::group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, const std::string& label) {
    const auto& xs = checked(x).shape;
    if (xs.size() != 3)
        shape_error("group_norm", label, "expects x[C,H,W], got " + shape_string(xs));
    if (groups <= 0 || xs[0] % static_cast<std::size_t>(groups) != 0)
        shape_error("group_norm", label, std::to_string(groups) + " groups do not divide " + std::to_string(xs[0]) + " channels");
    if (checked(gamma).shape != Shape{xs[0]} || checked(beta).shape != Shape{xs[0]})
        shape_error("group_norm", label, "gamma/beta must be [" + std::to_string(xs[0]) + "]");
    Node n{OpKind::GroupNorm, {x, gamma, beta}, label, xs};
    n.groups = groups;
    return push(std::move(n));
}

NodeId Graph::upsample2x(NodeId x, const std::string& label) {
    const auto& xs = checked(x).shape;
    if (xs.size() != 3)
        shape_error("upsample2x", label, "expects x[C,H,W], got " + shape_string(xs));
    return push({OpKind::Upsample2x, {x}, label, {xs[0], xs[1] * 2, xs[2] * 2}});
}

NodeId Graph::downsample2x(NodeId x, const std::string& label) {
    const auto& xs = checked(x).shape;
    if (xs.size() != 3 || xs[1] % 2 || xs[2] % 2)
        shape_error("downsample2x", label, "expects x[C,H,W] with even H, W, got " + shape_string(xs));
    return push({OpKind::Downsample2x, {x}, label, {xs[0], xs[1] / 2, xs[2] / 2}});
}

NodeId Graph::concat(NodeId a, NodeId b, const std::string& label) {
    const auto& as = checked(a).shape;
    const auto& bs = checked(b).shape;
    if (as.size() != bs.size() || !std::equal(as.begin() + 1, as.end(), bs.begin() + 1))
        shape_error("concat", label, "trailing extents differ: " + shape_string(as) + " vs " + shape_string(bs));
    Shape out = as;
    out[0] += bs[0];
    return push({OpKind::Concat, {a, b}, label, std::move(out)});
}

NodeId Graph::add(NodeId a, NodeId b, const std::string& label) {
    if (checked(a).shape != checked(b).shape)
        shape_error("add", label, shape_string(node(a).shape) + " vs " + shape_string(node(b).shape));
    return push({OpKind::Add, {a, b}, label, node(a).shape});
}

NodeId Graph::mul(NodeId a, NodeId b, const std::string& label) {
    if (checked(a).shape != checked(b).shape)
        shape_error("mul", label, shape_string(node(a).shape) + " vs " + shape_string(node(b).shape));
    return push({OpKind::Mul, {a, b}, label, node(a).shape});
}

NodeId Graph::scale(NodeId x, double factor, const std::string& label) {
    Node n{OpKind::Scale, {x}, label, checked(x).shape};
    n.factor = factor;
    return push(std::move(n));
}

NodeId Graph::mean(NodeId x, const std::string& label) {
    checked(x);
    return push({OpKind::Mean, {x}, label, {1}});
}

NodeId Graph::l1_loss(NodeId pred, NodeId target, const std::string& label) {
    if (checked(pred).shape != checked(target).shape)
        shape_error("l1_loss", label, shape_string(node(pred).shape) + " vs " + shape_string(node(target).shape));
    return push({OpKind::L1Loss, {pred, target}, label, {1}});
}

std::optional<NodeId> Graph::find_input(const std::string& name) const {
    auto it = inputs_.find(name);
    return it == inputs_.end() ? std::nullopt : std::optional<NodeId>(it->second);
}

std::optional<NodeId> Graph::find_param(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? std::nullopt : std::optional<NodeId>(it->second);
}

std::vector<std::string> Graph::input_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : inputs_)
        out.push_back(name);
    return out;
}

std::vector<std::string> Graph::param_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_)
        out.push_back(name);
    return out;
}

Activations eval_graph(const Graph& graph, const NamedTensors& inputs, const ParamStore& params,
                       std::optional<NodeId> stop_after) {
    const std::size_t count =
        stop_after ? static_cast<std::size_t>(*stop_after) + 1 : graph.size();
    if (count > graph.size())
        throw UsageError("eval_graph: stop node out of range");
    Activations acts;
    acts.owned_.resize(count);
    acts.refs_.assign(count, nullptr);
    for (std::size_t i = 0; i < count; ++i) {
        const auto id = static_cast<NodeId>(i);
        const Node& n = graph.node(id);
        auto in = [&](std::size_t k) -> const Tensor& { return *acts.refs_[static_cast<std::size_t>(n.inputs[k])]; };
        Tensor out;
        switch (n.op) {
        case OpKind::Input: {
            auto it = inputs.find(n.name);
            if (it == inputs.end())
                throw UsageError("eval_graph: missing input for " + graph.describe(id));
            if (it->second.shape() != n.shape)
                throw UsageError("eval_graph: " + graph.describe(id) + " expects " + shape_string(n.shape) +
                                 ", got " + shape_string(it->second.shape()));
            if (!it->second.all_finite())
                throw NumericError("eval_graph: non-finite values in " + graph.describe(id));
            acts.refs_[i] = &it->second;
            continue;
        }
        case OpKind::Param: {
            const Tensor& p = params.get(n.name);
            if (p.shape() != n.shape)
                throw UsageError("eval_graph: " + graph.describe(id) + " expects " + shape_string(n.shape) +
                                 ", store holds " + shape_string(p.shape()));
            if (!p.all_finite())
                throw NumericError("eval_graph: non-finite values in " + graph.describe(id));
            acts.refs_[i] = &p;
            continue;
        }
        case OpKind::Conv2d:
            out = kernels::conv2d(in(0), in(1));
            break;
        case OpKind::Linear:
            out = kernels::linear(in(0), in(1));
            break;
        case OpKind::BiasAdd:
            out = kernels::bias_add(in(0), in(1));
            break;
        case OpKind::Silu:
            out = kernels::silu(in(0));
            break;
        case OpKind::GroupNorm:
            out = kernels::group_norm(in(0), in(1), in(2), n.groups);
            break;
        case OpKind::Upsample2x:
            out = kernels::upsample2x(in(0));
            break;
        case OpKind::Downsample2x:
            out = kernels::downsample2x(in(0));
            break;
        case OpKind::Concat:
            out = kernels::concat(in(0), in(1));
            break;
        case OpKind::Add: {
            out = in(0);
            kernels::accumulate(out, in(1));
            break;
        }
        case OpKind::Mul: {
            out = in(0);
            const Tensor& b = in(1);
            for (std::size_t k = 0; k < out.size(); ++k)
                out[k] *= b[k];
            break;
        }
        case OpKind::Scale: {
            out = in(0);
            for (auto& v : out.values())
                v *= n.factor;
            break;
        }
        case OpKind::Mean: {
            const Tensor& x = in(0);
            double s = 0.0;
            for (auto v : x.values())
                s += v;
            out = Tensor::scalar(s / static_cast<double>(x.size()));
            break;
        }
        case OpKind::L1Loss: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            double s = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k)
                s += std::abs(a[k] - b[k]);
            out = Tensor::scalar(s / static_cast<double>(a.size()));
            break;
        }
        }
        if (!out.all_finite())
            throw NumericError("eval_graph: non-finite output at " + graph.describe(id));
        acts.owned_[i] = std::move(out);
        acts.refs_[i] = &acts.owned_[i];
    }
    return acts;
}

Gradients backprop(const Graph& graph, const Activations& acts, NodeId loss, const ParamStore& params,
                   double seed, bool input_grads) {
    if (loss < 0 || static_cast<std::size_t>(loss) >= acts.size())
        throw UsageError("backprop: loss node was not evaluated");
    if (graph.node(loss).shape != Shape{1})
        throw UsageError("backprop: loss " + graph.describe(loss) + " is not scalar (shape " +
                         shape_string(graph.node(loss).shape) + ")");

    const std::size_t count = static_cast<std::size_t>(loss) + 1;
    // Nodes that lead to something differentiable (trainable params or inputs).
    std::vector<char> needs(count, 0);
    for (std::size_t i = 0; i < count; ++i) {
        const Node& n = graph.node(static_cast<NodeId>(i));
        if (n.op == OpKind::Input)
            needs[i] = input_grads ? 1 : 0;
        else if (n.op == OpKind::Param)
            needs[i] = params.trainable(n.name) ? 1 : 0;
        else
            for (auto in : n.inputs)
                needs[i] |= needs[static_cast<std::size_t>(in)];
    }
    // Ancestors of the loss.
    std::vector<char> feeds(count, 0);
    feeds[count - 1] = 1;
    for (std::size_t i = count; i-- > 0;)
        if (feeds[i])
            for (auto in : graph.node(static_cast<NodeId>(i)).inputs)
                feeds[static_cast<std::size_t>(in)] = 1;

    std::vector<Tensor> grads(count);
    grads[count - 1] = Tensor::scalar(seed);
    auto grad_of = [&](NodeId id) -> Tensor* {
        const auto k = static_cast<std::size_t>(id);
        if (!needs[k])
            return nullptr;
        if (grads[k].empty())
            grads[k] = Tensor(graph.node(id).shape, 0.0);
        return &grads[k];
    };

    Gradients result;
    for (std::size_t i = count; i-- > 0;) {
        if (!feeds[i])
            continue;
        const auto id = static_cast<NodeId>(i);
        result.visited.push_back(id);
        const Node& n = graph.node(id);
        if (!needs[i] || grads[i].empty())
            continue;
        const Tensor& dy = grads[i];
        auto x = [&](std::size_t k) -> const Tensor& { return acts[n.inputs[k]]; };
        switch (n.op) {
        case OpKind::Input:
            result.inputs[n.name] = dy;
            break;
        case OpKind::Param:
            result.params[n.name] = dy;
            break;
        case OpKind::Conv2d:
            kernels::conv2d_backward(x(0), x(1), dy, grad_of(n.inputs[0]), grad_of(n.inputs[1]));
            break;
        case OpKind::Linear:
            kernels::linear_backward(x(0), x(1), dy, grad_of(n.inputs[0]), grad_of(n.inputs[1]));
            break;
        case OpKind::BiasAdd:
            kernels::bias_add_backward(dy, x(1).size(), grad_of(n.inputs[0]), grad_of(n.inputs[1]));
            break;
        case OpKind::Silu:
            if (auto* g = grad_of(n.inputs[0]))
                kernels::silu_backward(x(0), dy, g);
            break;
        case OpKind::GroupNorm: {
            auto* gx = grad_of(n.inputs[0]);
            auto* gg = grad_of(n.inputs[1]);
            auto* gb = grad_of(n.inputs[2]);
            kernels::group_norm_backward(x(0), x(1), n.groups, dy, gx, gg, gb);
            break;
        }
        case OpKind::Upsample2x:
            if (auto* g = grad_of(n.inputs[0]))
                kernels::upsample2x_backward(dy, g);
            break;
        case OpKind::Downsample2x:
            if (auto* g = grad_of(n.inputs[0]))
                kernels::downsample2x_backward(dy, g);
            break;
        case OpKind::Concat: {
            const std::size_t split = x(0).size();
            if (auto* g = grad_of(n.inputs[0]))
                for (std::size_t k = 0; k < split; ++k)
                    (*g)[k] += dy[k];
            if (auto* g = grad_of(n.inputs[1]))
                for (std::size_t k = 0; k < g->size(); ++k)
                    (*g)[k] += dy[split + k];
            break;
        }
        case OpKind::Add:
            if (auto* g = grad_of(n.inputs[0]))
                kernels::accumulate(*g, dy);
            if (auto* g = grad_of(n.inputs[1]))
                kernels::accumulate(*g, dy);
            break;
        case OpKind::Mul: {
            const Tensor& a = x(0);
            const Tensor& b = x(1);
            if (auto* g = grad_of(n.inputs[0]))
                for (std::size_t k = 0; k < g->size(); ++k)
                    (*g)[k] += dy[k] * b[k];
            if (auto* g = grad_of(n.inputs[1]))
                for (std::size_t k = 0; k < g->size(); ++k)
                    (*g)[k] += dy[k] * a[k];
            break;
        }
        case OpKind::Scale:
            if (auto* g = grad_of(n.inputs[0]))
                for (std::size_t k = 0; k < g->size(); ++k)
                    (*g)[k] += dy[k] * n.factor;
            break;
        case OpKind::Mean:
            if (auto* g = grad_of(n.inputs[0])) {
                const double s = dy[0] / static_cast<double>(g->size());
                for (auto& v : g->values())
                    v += s;
            }
            break;
        case OpKind::L1Loss: {
            const Tensor& a = x(0);
            const Tensor& b = x(1);
            const double s = dy[0] / static_cast<double>(a.size());
            auto* ga = grad_of(n.inputs[0]);
            auto* gb = grad_of(n.inputs[1]);
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double r = a[k] - b[k];
                const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
                if (ga)
                    (*ga)[k] += s * sign;
                if (gb)
                    (*gb)[k] -= s * sign;
            }
            break;
        }
        }
        // Intermediate gradients are no longer needed once propagated.
        if (n.op != OpKind::Input && n.op != OpKind::Param)
            grads[i] = Tensor();
    }
    return result;
}

Gradients backprop(const Graph& graph, NodeId loss, const NamedTensors& inputs, const ParamStore& params) {
    const auto acts = eval_graph(graph, inputs, params, loss);
    return backprop(graph, acts, loss, params);
}

GradCheckReport grad_check(const Graph& graph, NodeId loss, const NamedTensors& inputs, const ParamStore& params,
                           double eps) {
    const auto analytic = backprop(graph, loss, inputs, params);
    ParamStore probe = params;
    auto loss_at = [&]() { return eval_graph(graph, inputs, probe, loss)[loss][0]; };

    GradCheckReport report;
    for (const auto& name : params.trainable_names()) {
        if (!graph.find_param(name))
            continue;
        const auto it = analytic.params.find(name);
        Tensor& value = probe.get_mut(name);
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double original = value[k];
            value[k] = original + eps;
            const double up = loss_at();
            value[k] = original - eps;
            const double down = loss_at();
            value[k] = original;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = it == analytic.params.end() ? 0.0 : it->second[k];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            ++report.checked;
            if (rel > report.max_rel_error || report.checked == 1) {
                report.max_rel_error = std::max(report.max_rel_error, rel);
                report.worst_param = name;
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace rawdiff
