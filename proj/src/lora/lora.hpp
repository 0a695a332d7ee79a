#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "common/rng.hpp"
#include "tensor/graph.hpp"
#include "tensor/param_store.hpp"

namespace rawdiff {

inline constexpr int kDefaultLoraRank = 4;
inline constexpr double kLoraInitStd = 0.02;

/// One adapted weight. For a linear W0[d,k]: A[d,r] and B[r,k] with
/// dW = A B. For a conv W0[O,C,kh,kw]: down[r,C,kh,kw] then up[O,r,1,1].
struct LoraSite {
    enum class Kind { Linear, Conv };
    std::string param;  // name of W0
    Kind kind = Kind::Linear;

    std::string first_name() const;   // A (linear) or down kernel (conv)
    std::string second_name() const;  // B (linear) or up kernel (conv)
};

struct LoraAdapterSet {
    int rank = kDefaultLoraRank;
    double scale = 1.0;
    std::vector<LoraSite> sites;
    bool consumed = false;  // set by merge_lora

    const LoraSite* find(const std::string& param) const;
    /// Adapter values (first + second factor) over all sites.
    std::size_t parameter_count(const ParamStore& params) const;
};

inline constexpr const char* kLoraPrefix = "lora.";
bool is_lora_name(const std::string& name);

/// Attaches adapters to every parameter matching one of `patterns`
/// (shell-style globs). Each pattern must match at least one rank-2 or rank-4
/// weight. First factors ~ N(0, 0.02^2), second factors zero. All existing
/// parameters become frozen, adapter parameters trainable.
LoraAdapterSet attach_lora(ParamStore& params, const std::vector<std::string>& patterns, int rank, Rng& rng,
                           double scale = 1.0);

/// y = W0 x + scale * A (B x), never forming A B.
Tensor lora_forward_linear(const Tensor& x, const Tensor& w0, const Tensor& a, const Tensor& b, double scale = 1.0);

/// y = conv(x, W0) + scale * conv1x1(conv(x, down), up)
Tensor lora_forward_conv(const Tensor& x, const Tensor& w0, const Tensor& down, const Tensor& up, double scale = 1.0);

/// Materialized update for a site: A B for linear, sum_j up[o,j] down[j,...] for conv.
Tensor lora_delta(const LoraSite& site, const ParamStore& params);

/// New store with W0 + scale * delta folded in and adapter entries removed;
/// every remaining parameter is trainable again. Marks the set consumed;
/// a second merge throws.
ParamStore merge_lora(LoraAdapterSet& adapters, const ParamStore& params);

/// Graph helpers used by network builders. Without an adapter for `weight`
/// they reduce to plain linear / conv2d.
NodeId lora_linear(Graph& g, const LoraAdapterSet* adapters, const std::string& weight, Shape weight_shape, NodeId x);
NodeId lora_conv(Graph& g, const LoraAdapterSet* adapters, const std::string& weight, Shape weight_shape, NodeId x);

/// Hash of every non-adapter parameter; ties adapter files to their base.
std::uint64_t base_params_hash(const ParamStore& params);

/// Store with only the adapter entries.
ParamStore adapter_params(const LoraAdapterSet& adapters, const ParamStore& params);

void to_json(nlohmann::json& j, const LoraAdapterSet& a);
void from_json(const nlohmann::json& j, LoraAdapterSet& a);

} // namespace rawdiff
