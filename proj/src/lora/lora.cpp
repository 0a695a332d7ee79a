#include "lora/lora.hpp"

#include <fnmatch.h>

#include <algorithm>

#include "common/binio.hpp"
#include "common/error.hpp"
#include "tensor/kernels.hpp"

namespace rawdiff {

std::string LoraSite::first_name() const {
    return std::string(kLoraPrefix) + param + (kind == Kind::Linear ? ".A" : ".down");
}

std::string LoraSite::second_name() const {
    return std::string(kLoraPrefix) + param + (kind == Kind::Linear ? ".B" : ".up");
}

const LoraSite* LoraAdapterSet::find(const std::string& param) const {
    for (const auto& s : sites)
        if (s.param == param)
            return &s;
    return nullptr;
}

std::size_t LoraAdapterSet::parameter_count(const ParamStore& params) const {
    std::size_t n = 0;
    for (const auto& s : sites)
        n += params.get(s.first_name()).size() + params.get(s.second_name()).size();
    return n;
}

bool is_lora_name(const std::string& name) {
    return name.rfind(kLoraPrefix, 0) == 0;
}

LoraAdapterSet attach_lora(ParamStore& params, const std::vector<std::string>& patterns, int rank, Rng& rng,
                           double scale) {
    if (rank < 1)
        throw UsageError("lora rank must be >= 1, got " + std::to_string(rank));
    for (const auto& name : params.names())
        if (is_lora_name(name))
            throw UsageError("adapters are already attached");

    LoraAdapterSet set;
    set.rank = rank;
    set.scale = scale;
    const auto names = params.names();
    for (const auto& pattern : patterns) {
        bool matched = false;
        for (const auto& name : names) {
            if (fnmatch(pattern.c_str(), name.c_str(), 0) != 0)
                continue;
            const auto rank_of = params.get(name).rank();
            if (rank_of != 2 && rank_of != 4) {
                if (pattern == name)
                    throw UsageError("lora site '" + name + "' is neither a linear nor a conv weight");
                continue;
            }
            matched = true;
            if (set.find(name))
                continue;
            set.sites.push_back({name, rank_of == 2 ? LoraSite::Kind::Linear : LoraSite::Kind::Conv});
        }
        if (!matched)
            throw UsageError("unknown lora site '" + pattern + "'");
    }
    std::sort(set.sites.begin(), set.sites.end(), [](const LoraSite& a, const LoraSite& b) { return a.param < b.param; });

    for (const auto& name : names)
        params.set_trainable(name, false);
    const auto r = static_cast<std::size_t>(rank);
    for (const auto& site : set.sites) {
        const auto& shape = params.get(site.param).shape();
        Tensor first, second;
        if (site.kind == LoraSite::Kind::Linear) {
            first = Tensor({shape[0], r});
            second = Tensor({r, shape[1]});
        } else {
            first = Tensor({r, shape[1], shape[2], shape[3]});
            second = Tensor({shape[0], r, 1, 1});
        }
        for (auto& v : first.values())
            v = rng.normal(0.0, kLoraInitStd);
        params.add(site.first_name(), std::move(first), true);
        params.add(site.second_name(), std::move(second), true);
    }
    return set;
}

Tensor lora_forward_linear(const Tensor& x, const Tensor& w0, const Tensor& a, const Tensor& b, double scale) {
    if (w0.rank() != 2 || a.rank() != 2 || b.rank() != 2 || x.rank() < 1 || w0.dim(1) != x.dim(0) ||
        b.dim(1) != x.dim(0) || a.dim(1) != b.dim(0) || a.dim(0) != w0.dim(0))
        throw UsageError("lora_forward_linear: shapes not conformable: x " + shape_string(x.shape()) + ", W0 " +
                         shape_string(w0.shape()) + ", A " + shape_string(a.shape()) + ", B " + shape_string(b.shape()));
    Tensor y = kernels::linear(w0, x);
    const Tensor branch = kernels::linear(a, kernels::linear(b, x));
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] += scale * branch[i];
    return y;
}

Tensor lora_forward_conv(const Tensor& x, const Tensor& w0, const Tensor& down, const Tensor& up, double scale) {
    if (x.rank() != 3 || w0.rank() != 4 || down.rank() != 4 || up.rank() != 4 || w0.dim(1) != x.dim(0) ||
        down.dim(1) != x.dim(0) || down.dim(2) != w0.dim(2) || down.dim(3) != w0.dim(3) || up.dim(1) != down.dim(0) ||
        up.dim(0) != w0.dim(0) || up.dim(2) != 1 || up.dim(3) != 1)
        throw UsageError("lora_forward_conv: shapes not conformable: x " + shape_string(x.shape()) + ", W0 " +
                         shape_string(w0.shape()) + ", down " + shape_string(down.shape()) + ", up " +
                         shape_string(up.shape()));
    Tensor y = kernels::conv2d(x, w0);
    const Tensor branch = kernels::conv2d(kernels::conv2d(x, down), up);
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] += scale * branch[i];
    return y;
}

Tensor lora_delta(const LoraSite& site, const ParamStore& params) {
    const Tensor& first = params.get(site.first_name());
    const Tensor& second = params.get(site.second_name());
    if (site.kind == LoraSite::Kind::Linear) {
        const std::size_t d = first.dim(0), r = first.dim(1), k = second.dim(1);
        Tensor delta({d, k});
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < r; ++j)
                for (std::size_t c = 0; c < k; ++c)
                    delta[i * k + c] += first[i * r + j] * second[j * k + c];
        return delta;
    }
    const std::size_t r = first.dim(0), inner = first.size() / r, O = second.dim(0);
    Tensor delta({O, first.dim(1), first.dim(2), first.dim(3)});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t j = 0; j < r; ++j) {
            const double u = second[o * r + j];
            for (std::size_t i = 0; i < inner; ++i)
                delta[o * inner + i] += u * first[j * inner + i];
        }
    return delta;
}

ParamStore merge_lora(LoraAdapterSet& adapters, const ParamStore& params) {
    if (adapters.consumed)
        throw UsageError("lora adapters were already merged");
    ParamStore merged;
    for (const auto& [name, entry] : params.entries()) {
        if (is_lora_name(name))
            continue;
        Tensor value = entry.value;
        if (const auto* site = adapters.find(name)) {
            const Tensor delta = lora_delta(*site, params);
            for (std::size_t i = 0; i < value.size(); ++i)
                value[i] += adapters.scale * delta[i];
        }
        merged.add(name, std::move(value), true);
    }
    adapters.consumed = true;
    return merged;
}

NodeId lora_linear(Graph& g, const LoraAdapterSet* adapters, const std::string& weight, Shape weight_shape, NodeId x) {
    const NodeId w = g.param(weight, weight_shape);
    NodeId y = g.linear(w, x, weight);
    const LoraSite* site = adapters && !adapters->consumed ? adapters->find(weight) : nullptr;
    if (!site)
        return y;
    const auto r = static_cast<std::size_t>(adapters->rank);
    const NodeId a = g.param(site->first_name(), {weight_shape[0], r});
    const NodeId b = g.param(site->second_name(), {r, weight_shape[1]});
    NodeId branch = g.linear(a, g.linear(b, x, site->second_name()), site->first_name());
    if (adapters->scale != 1.0)
        branch = g.scale(branch, adapters->scale);
    return g.add(y, branch, weight + "+lora");
}

NodeId lora_conv(Graph& g, const LoraAdapterSet* adapters, const std::string& weight, Shape weight_shape, NodeId x) {
    const NodeId w = g.param(weight, weight_shape);
    NodeId y = g.conv2d(x, w, weight);
    const LoraSite* site = adapters && !adapters->consumed ? adapters->find(weight) : nullptr;
    if (!site)
        return y;
    const auto r = static_cast<std::size_t>(adapters->rank);
    const NodeId down = g.param(site->first_name(), {r, weight_shape[1], weight_shape[2], weight_shape[3]});
    const NodeId up = g.param(site->second_name(), {weight_shape[0], r, 1, 1});
    NodeId branch = g.conv2d(g.conv2d(x, down, site->first_name()), up, site->second_name());
    if (adapters->scale != 1.0)
        branch = g.scale(branch, adapters->scale);
    return g.add(y, branch, weight + "+lora");
}

std::uint64_t base_params_hash(const ParamStore& params) {
    ParamStore base;
    for (const auto& [name, entry] : params.entries())
        if (!is_lora_name(name))
            base.add(name, entry.value);
    return base.content_hash();
}

ParamStore adapter_params(const LoraAdapterSet& adapters, const ParamStore& params) {
    ParamStore out;
    for (const auto& s : adapters.sites) {
        out.add(s.first_name(), params.get(s.first_name()));
        out.add(s.second_name(), params.get(s.second_name()));
    }
    return out;
}

void to_json(nlohmann::json& j, const LoraAdapterSet& a) {
    auto sites = nlohmann::json::array();
    for (const auto& s : a.sites)
        sites.push_back({{"param", s.param}, {"kind", s.kind == LoraSite::Kind::Linear ? "linear" : "conv"}});
    j = {{"rank", a.rank}, {"scale", a.scale}, {"sites", sites}};
}

void from_json(const nlohmann::json& j, LoraAdapterSet& a) {
    a.rank = j.at("rank").get<int>();
    a.scale = j.value("scale", 1.0);
    a.sites.clear();
    for (const auto& s : j.at("sites")) {
        const auto kind = s.at("kind").get<std::string>();
        if (kind != "linear" && kind != "conv")
            throw DataError("unknown lora site kind '" + kind + "'");
        a.sites.push_back({s.at("param").get<std::string>(), kind == "linear" ? LoraSite::Kind::Linear : LoraSite::Kind::Conv});
    }
    a.consumed = false;
}

} // namespace rawdiff
