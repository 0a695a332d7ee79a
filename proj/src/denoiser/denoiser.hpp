#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "common/rng.hpp"
#include "denoiser/condition.hpp"
#include "diffusion/sampler.hpp"
#include "lora/lora.hpp"
#include "tensor/graph.hpp"

namespace rawdiff {

struct DenoiserConfig {
    int base_channels = 32;
    int depth = 2;             // number of 2x down/up levels
    int blocks_per_level = 2;
    int cond_dim = static_cast<int>(kConditionDim);
    int time_embed_dim = 128;  // also the width of the modulation vector
    int patch_size = 32;       // mosaic pixels; planes are patch_size/2
    int diffusion_steps = 1000;

    /// Channels at level l: base, then 2*base for every deeper level.
    int channels_at(int level) const { return base_channels * (level == 0 ? 1 : 2); }

    /// Throws UsageError on inconsistent values.
    void validate() const;

    bool operator==(const DenoiserConfig&) const = default;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

enum class Conditioning {
    Text,  // per-image condition vector is a graph input
    Null,  // a single trainable vector replaces it
};

const char* conditioning_name(Conditioning c);
Conditioning parse_conditioning(const std::string& s);

/// Sinusoidal encoding of t: dim/2 sines then dim/2 cosines, frequencies
/// geometric from 1 down to 1e-4.
Tensor timestep_encoding(int t, int dim);

struct BuildOptions {
    bool modulation = true;  // false drops the per-block embedding injection
};

/// Graph over inputs x_t[4,h,w], y[4,h,w], temb[time_embed_dim] and (text
/// variant) cond[cond_dim]; `output` is x0_hat[4,h,w]. A training head adds
/// input `target` and `loss` = L1(output, target).
struct DenoiserGraph {
    Graph graph;
    NodeId output = -1;
    NodeId loss = -1;
};

DenoiserGraph build_denoiser_graph(const DenoiserConfig& config, Conditioning conditioning, std::size_t plane_h,
                                   std::size_t plane_w, const LoraAdapterSet* adapters = nullptr,
                                   BuildOptions options = {});

/// Randomly initialised parameters; the output convolution starts at zero.
ParamStore init_denoiser_params(const DenoiserConfig& config, Conditioning conditioning, Rng& rng);

struct DenoiserNet {
    ParamStore params;
    DenoiserGraph graph;
};

/// Parameters plus a graph at the configured patch size.
DenoiserNet build_denoiser(const DenoiserConfig& config, Rng& rng, Conditioning conditioning = Conditioning::Text);

/// Glob patterns for the adapter sites: residual-block convolutions and the
/// conditioning fully-connected layers.
std::vector<std::string> default_lora_sites();

/// Parameters, configuration and optional adapters of one model.
class Denoiser {
public:
    Denoiser(DenoiserConfig config, Conditioning conditioning, ParamStore params,
             std::optional<LoraAdapterSet> adapters = std::nullopt);

    static Denoiser create(const DenoiserConfig& config, Conditioning conditioning, Rng& rng);

    Denoiser(const Denoiser& other);
    Denoiser& operator=(const Denoiser& other);

    const DenoiserConfig& config() const { return config_; }
    Conditioning conditioning() const { return conditioning_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }
    const LoraAdapterSet* adapters() const { return adapters_ ? &*adapters_ : nullptr; }

    void attach_lora(const std::vector<std::string>& patterns, int rank, Rng& rng, double scale = 1.0);
    /// Installs adapters whose parameters are in `adapter_values`.
    void install_lora(LoraAdapterSet adapters, const ParamStore& adapter_values);
    /// Folds adapters into the base weights.
    void merge_lora();

    /// Graph for the given plane extents (cached).
    const DenoiserGraph& graph(std::size_t plane_h, std::size_t plane_w) const;

    NamedTensors make_inputs(const Tensor& x_t, const Tensor& y, int t, const ConditionVector& cond) const;

    /// Single forward pass in the model domain.
    Tensor predict_x0(const Tensor& x_t, const Tensor& y, int t, const ConditionVector& cond) const;

    X0Predictor predictor() const;

private:
    void invalidate();

    DenoiserConfig config_;
    Conditioning conditioning_;
    ParamStore params_;
    std::optional<LoraAdapterSet> adapters_;

    mutable std::mutex cache_mutex_;
    mutable std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const DenoiserGraph>> cache_;
};

/// Checkpoint file: "RDCK", version u32, u32-length-prefixed JSON header
/// (config, conditioning, adapters), then the RDWT parameter container.
void save_checkpoint(const std::string& path, const Denoiser& model, const nlohmann::json& extra = {});
Denoiser load_checkpoint(const std::string& path);

/// Adapter-only file in the same layout; the header records the base hash.
void save_adapters(const std::string& path, const Denoiser& model);
/// Throws DataError when the file was trained against a different base.
void load_adapters(const std::string& path, Denoiser& model);

struct CheckpointFile {
    nlohmann::json header;
    ParamStore params;
};
CheckpointFile read_checkpoint_file(const std::string& path);
void write_checkpoint_file(const std::string& path, const nlohmann::json& header, const ParamStore& params);

} // namespace rawdiff
