#include "denoiser/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "common/binio.hpp"
#include "common/error.hpp"

namespace rawdiff {

namespace {

constexpr char kCheckpointMagic[] = "RDCK";
constexpr std::uint32_t kCheckpointVersion = 1;

int group_count(int channels) {
    return std::min(8, channels);
}

std::size_t sz(int v) {
    return static_cast<std::size_t>(v);
}

// Builder state shared by the blocks of one network.
struct NetBuilder {
    Graph& g;
    const LoraAdapterSet* adapters;
    bool modulation;
    NodeId mod_act = -1;  // silu(time_fc + cond_fc)
    std::size_t mod_dim = 0;

    NodeId conv(const std::string& name, NodeId x, int in, int out, int k, bool adaptable) {
        const Shape ws{sz(out), sz(in), sz(k), sz(k)};
        NodeId y = adaptable ? lora_conv(g, adapters, name + ".weight", ws, x)
                             : g.conv2d(x, g.param(name + ".weight", ws), name);
        return g.bias_add(y, g.param(name + ".bias", {sz(out)}), name + ".bias");
    }

    NodeId fc(const std::string& name, NodeId x, std::size_t in, std::size_t out, bool bias = true) {
        NodeId y = lora_linear(g, adapters, name + ".weight", {out, in}, x);
        if (bias)
            y = g.bias_add(y, g.param(name + ".bias", {out}), name + ".bias");
        return y;
    }

    NodeId norm(const std::string& name, NodeId x, int channels) {
        return g.group_norm(x, g.param(name + ".gamma", {sz(channels)}), g.param(name + ".beta", {sz(channels)}),
                            group_count(channels), name);
    }

    NodeId resblock(const std::string& name, NodeId x, int in, int out) {
        NodeId h = g.silu(norm(name + ".norm1", x, in));
        h = conv(name + ".conv1", h, in, out, 3, true);
        if (modulation) {
            const NodeId m = fc(name + ".emb_proj", mod_act, mod_dim, sz(out), false);
            h = g.bias_add(h, m, name + ".modulate");
        }
        h = g.silu(norm(name + ".norm2", h, out));
        h = conv(name + ".conv2", h, out, out, 3, true);
        const NodeId skip = in == out ? x : conv(name + ".skip", x, in, out, 1, false);
        return g.add(skip, h, name + ".out");
    }
};

void add_normal(ParamStore& p, const std::string& name, Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.values())
        v = rng.normal(0.0, stddev);
    p.add(name, std::move(t));
}

} // namespace

void DenoiserConfig::validate() const {
    if (base_channels < 1 || depth < 0 || blocks_per_level < 1 || cond_dim < 1 || time_embed_dim < 2 ||
        time_embed_dim % 2 != 0)
        throw UsageError("denoiser config: base_channels, blocks_per_level, cond_dim must be >= 1, depth >= 0, "
                         "time_embed_dim even and >= 2");
    if (patch_size < 2 || patch_size % 2 != 0 || (patch_size / 2) % (1 << depth) != 0)
        throw UsageError("denoiser config: patch_size " + std::to_string(patch_size) +
                         " must be even with planes divisible by 2^depth");
    for (int l = 0; l <= depth; ++l)
        for (int c : {channels_at(l), 2 * channels_at(l)})
            if (c % group_count(c) != 0)
                throw UsageError("denoiser config: channel count " + std::to_string(c) + " not divisible into " +
                                 std::to_string(group_count(c)) + " groups");
    if (diffusion_steps < 2)
        throw UsageError("denoiser config: diffusion_steps must be >= 2");
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
    j = {{"base_channels", c.base_channels}, {"depth", c.depth},           {"blocks_per_level", c.blocks_per_level},
         {"cond_dim", c.cond_dim},           {"time_embed_dim", c.time_embed_dim}, {"patch_size", c.patch_size},
         {"diffusion_steps", c.diffusion_steps}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
    c.base_channels = j.value("base_channels", c.base_channels);
    c.depth = j.value("depth", c.depth);
    c.blocks_per_level = j.value("blocks_per_level", c.blocks_per_level);
    c.cond_dim = j.value("cond_dim", c.cond_dim);
    c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
}

const char* conditioning_name(Conditioning c) {
    return c == Conditioning::Text ? "text" : "null";
}

Conditioning parse_conditioning(const std::string& s) {
    if (s == "text")
        return Conditioning::Text;
    if (s == "null")
        return Conditioning::Null;
    throw UsageError("conditioning must be 'text' or 'null', got '" + s + "'");
}

Tensor timestep_encoding(int t, int dim) {
    if (t < 0)
        throw UsageError("timestep must be >= 0");
    if (dim < 2 || dim % 2)
        throw UsageError("timestep encoding dim must be even");
    const std::size_t half = sz(dim / 2);
    Tensor out({sz(dim)});
    const double log_max = std::log(1e4);
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = half == 1 ? 1.0 : std::exp(-log_max * static_cast<double>(k) / static_cast<double>(half - 1));
        out[k] = std::sin(t * freq);
        out[half + k] = std::cos(t * freq);
    }
    return out;
}

DenoiserGraph build_denoiser_graph(const DenoiserConfig& config, Conditioning conditioning, std::size_t plane_h,
                                   std::size_t plane_w, const LoraAdapterSet* adapters, BuildOptions options) {
    config.validate();
    const std::size_t factor = std::size_t{1} << config.depth;
    if (plane_h == 0 || plane_w == 0 || plane_h % factor || plane_w % factor)
        throw UsageError("denoiser: plane extents " + std::to_string(plane_h) + "x" + std::to_string(plane_w) +
                         " not divisible by 2^depth = " + std::to_string(factor));
    DenoiserGraph out;
    Graph& g = out.graph;
    NetBuilder b{g, adapters, options.modulation};
    const std::size_t E = sz(config.time_embed_dim);

    const NodeId x_t = g.input("x_t", {4, plane_h, plane_w});
    const NodeId y = g.input("y", {4, plane_h, plane_w});
    const NodeId temb = g.input("temb", {E});
    const NodeId cond = conditioning == Conditioning::Text ? g.input("cond", {sz(config.cond_dim)})
                                                           : g.param("null_cond", {sz(config.cond_dim)});

    if (options.modulation) {
        NodeId tvec = b.fc("time.fc2", g.silu(b.fc("time.fc1", temb, E, E)), E, E);
        NodeId cvec = b.fc("cond.fc2", g.silu(b.fc("cond.fc1", cond, sz(config.cond_dim), E)), E, E);
        b.mod_act = g.silu(g.add(tvec, cvec, "modulation"));
        b.mod_dim = E;
    }

    NodeId h = b.conv("in_conv", g.concat(x_t, y, "x_t|y"), 8, config.channels_at(0), 3, false);
    std::vector<NodeId> skips;
    int ch = config.channels_at(0);
    for (int l = 0; l < config.depth; ++l) {
        for (int k = 0; k < config.blocks_per_level; ++k) {
            const std::string name = "enc" + std::to_string(l) + ".res" + std::to_string(k);
            h = b.resblock(name, h, ch, config.channels_at(l));
            ch = config.channels_at(l);
        }
        skips.push_back(h);
        const std::string name = "enc" + std::to_string(l) + ".down";
        h = g.downsample2x(b.conv(name, h, ch, config.channels_at(l + 1), 3, false), name);
        ch = config.channels_at(l + 1);
    }
    for (int k = 0; k < config.blocks_per_level; ++k)
        h = b.resblock("mid.res" + std::to_string(k), h, ch, ch);
    for (int l = config.depth - 1; l >= 0; --l) {
        const std::string prefix = "dec" + std::to_string(l);
        h = b.conv(prefix + ".up", g.upsample2x(h, prefix + ".up"), ch, config.channels_at(l), 3, false);
        h = g.concat(h, skips[sz(l)], prefix + ".skip");
        ch = 2 * config.channels_at(l);
        for (int k = 0; k < config.blocks_per_level; ++k) {
            h = b.resblock(prefix + ".res" + std::to_string(k), h, ch, config.channels_at(l));
            ch = config.channels_at(l);
        }
    }
    h = g.silu(b.norm("out_norm", h, ch));
    out.output = b.conv("out_conv", h, ch, 4, 3, false);
    const NodeId target = g.input("target", {4, plane_h, plane_w});
    out.loss = g.l1_loss(out.output, target, "loss");
    return out;
}

ParamStore init_denoiser_params(const DenoiserConfig& config, Conditioning conditioning, Rng& rng) {
    // Walk a graph of the configured size and initialise each parameter by role.
    const auto planes = sz(config.patch_size / 2);
    const auto built = build_denoiser_graph(config, conditioning, planes, planes);
    ParamStore params;
    for (const auto& node : built.graph.nodes()) {
        if (node.op != OpKind::Param)
            continue;
        const auto& name = node.name;
        const auto& shape = node.shape;
        auto ends_with = [&](const char* suffix) {
            const std::string s(suffix);
            return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
        };
        if (name.rfind("out_conv.", 0) == 0 || ends_with(".bias") || ends_with(".beta")) {
            params.add(name, Tensor(shape, 0.0));
        } else if (ends_with(".gamma")) {
            params.add(name, Tensor(shape, 1.0));
        } else if (name == "null_cond") {
            continue;  // drawn last so both variants share every other initial value
        } else if (shape.size() == 4 || shape.size() == 2) {
            const std::size_t fan_in = shape_numel(shape) / shape[0];
            add_normal(params, name, shape, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
        } else {
            throw UsageError("denoiser: no initialiser for parameter '" + name + "'");
        }
    }
    if (conditioning == Conditioning::Null)
        add_normal(params, "null_cond", {sz(config.cond_dim)}, 1.0 / std::sqrt(static_cast<double>(config.cond_dim)),
                   rng);
    return params;
}

DenoiserNet build_denoiser(const DenoiserConfig& config, Rng& rng, Conditioning conditioning) {
    DenoiserNet net;
    net.params = init_denoiser_params(config, conditioning, rng);
    const auto planes = sz(config.patch_size / 2);
    net.graph = build_denoiser_graph(config, conditioning, planes, planes);
    return net;
}

std::vector<std::string> default_lora_sites() {
    return {"*.conv1.weight", "*.conv2.weight", "time.fc*.weight", "cond.fc*.weight", "*.emb_proj.weight"};
}

Denoiser::Denoiser(DenoiserConfig config, Conditioning conditioning, ParamStore params,
                   std::optional<LoraAdapterSet> adapters)
    : config_(config), conditioning_(conditioning), params_(std::move(params)), adapters_(std::move(adapters)) {
    config_.validate();
    // Every parameter the graph references must be present with the right shape.
    const auto planes = sz(config_.patch_size / 2);
    const auto& g = graph(planes, planes).graph;
    for (const auto& name : g.param_names()) {
        const auto& expected = g.node(*g.find_param(name)).shape;
        if (!params_.contains(name))
            throw DataError("denoiser: parameter '" + name + "' missing");
        if (params_.get(name).shape() != expected)
            throw DataError("denoiser: parameter '" + name + "' has shape " + shape_string(params_.get(name).shape()) +
                            ", expected " + shape_string(expected));
    }
}

Denoiser Denoiser::create(const DenoiserConfig& config, Conditioning conditioning, Rng& rng) {
    return Denoiser(config, conditioning, init_denoiser_params(config, conditioning, rng));
}

Denoiser::Denoiser(const Denoiser& other)
    : config_(other.config_), conditioning_(other.conditioning_), params_(other.params_), adapters_(other.adapters_) {}

Denoiser& Denoiser::operator=(const Denoiser& other) {
    if (this != &other) {
        config_ = other.config_;
        conditioning_ = other.conditioning_;
        params_ = other.params_;
        adapters_ = other.adapters_;
        invalidate();
    }
    return *this;
}

void Denoiser::invalidate() {
    std::lock_guard lock(cache_mutex_);
    cache_.clear();
}

void Denoiser::attach_lora(const std::vector<std::string>& patterns, int rank, Rng& rng, double scale) {
    if (adapters_)
        throw UsageError("adapters are already attached");
    adapters_ = rawdiff::attach_lora(params_, patterns, rank, rng, scale);
    invalidate();
}

void Denoiser::install_lora(LoraAdapterSet adapters, const ParamStore& adapter_values) {
    if (adapters_)
        throw UsageError("adapters are already attached");
    for (const auto& name : params_.names())
        params_.set_trainable(name, false);
    const auto r = static_cast<std::size_t>(adapters.rank);
    for (const auto& site : adapters.sites) {
        if (!params_.contains(site.param))
            throw DataError("adapter site '" + site.param + "' does not exist in the base model");
        const auto& shape = params_.get(site.param).shape();
        const bool linear = site.kind == LoraSite::Kind::Linear;
        if ((linear && shape.size() != 2) || (!linear && shape.size() != 4))
            throw DataError("adapter site '" + site.param + "' kind does not match the base weight");
        const Shape first = linear ? Shape{shape[0], r} : Shape{r, shape[1], shape[2], shape[3]};
        const Shape second = linear ? Shape{r, shape[1]} : Shape{shape[0], r, 1, 1};
        for (const auto& [name, expected] : {std::pair{site.first_name(), first}, std::pair{site.second_name(), second}}) {
            if (!adapter_values.contains(name))
                throw DataError("adapter file lacks '" + name + "'");
            if (adapter_values.get(name).shape() != expected)
                throw DataError("adapter '" + name + "' has shape " + shape_string(adapter_values.get(name).shape()) +
                                ", expected " + shape_string(expected));
            params_.add(name, adapter_values.get(name), true);
        }
    }
    adapters_ = std::move(adapters);
    invalidate();
}

void Denoiser::merge_lora() {
    if (!adapters_)
        throw UsageError("no adapters attached");
    params_ = rawdiff::merge_lora(*adapters_, params_);
    adapters_.reset();
    invalidate();
}

const DenoiserGraph& Denoiser::graph(std::size_t plane_h, std::size_t plane_w) const {
    std::lock_guard lock(cache_mutex_);
    auto& slot = cache_[{plane_h, plane_w}];
    if (!slot)
        slot = std::make_shared<const DenoiserGraph>(
            build_denoiser_graph(config_, conditioning_, plane_h, plane_w, adapters()));
    return *slot;
}

NamedTensors Denoiser::make_inputs(const Tensor& x_t, const Tensor& y, int t, const ConditionVector& cond) const {
    if (x_t.shape() != y.shape() || x_t.rank() != 3 || x_t.dim(0) != 4)
        throw UsageError("denoiser: x_t " + shape_string(x_t.shape()) + " and y " + shape_string(y.shape()) +
                         " must both be [4,h,w]");
    NamedTensors inputs;
    inputs.emplace("x_t", x_t);
    inputs.emplace("y", y);
    inputs.emplace("temb", timestep_encoding(t, config_.time_embed_dim));
    if (conditioning_ == Conditioning::Text) {
        if (cond.is_null())
            throw UsageError("denoiser: text-conditioned model needs a condition vector");
        if (cond.values.size() != sz(config_.cond_dim))
            throw UsageError("denoiser: condition vector length " + std::to_string(cond.values.size()) +
                             ", expected " + std::to_string(config_.cond_dim));
        inputs.emplace("cond", cond.as_tensor());
    }
    return inputs;
}

Tensor Denoiser::predict_x0(const Tensor& x_t, const Tensor& y, int t, const ConditionVector& cond) const {
    const auto inputs = make_inputs(x_t, y, t, cond);
    const auto& dg = graph(x_t.dim(1), x_t.dim(2));
    const auto acts = eval_graph(dg.graph, inputs, params_, dg.output);
    return acts[dg.output];
}

X0Predictor Denoiser::predictor() const {
    return [this](const Tensor& x_t, const Tensor& y, int t, const ConditionVector& cond) {
        return predict_x0(x_t, y, t, cond);
    };
}

void write_checkpoint_file(const std::string& path, const nlohmann::json& header, const ParamStore& params) {
    binio::Writer w;
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.string_u32(header.dump());
    const auto body = params.serialize();
    w.bytes(body.data(), body.size());
    binio::write_file(path, w.buffer());
}

CheckpointFile read_checkpoint_file(const std::string& path) {
    const auto bytes = binio::read_file(path);
    binio::Reader r(bytes, path);
    if (!r.magic(kCheckpointMagic))
        throw DataError(path + ": bad magic (expected RDCK)");
    if (const auto v = r.u32(); v != kCheckpointVersion)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(v));
    CheckpointFile file;
    try {
        file.header = nlohmann::json::parse(r.string_u32());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": bad checkpoint header: " + e.what());
    }
    file.params = ParamStore::deserialize(r.rest(), path);
    return file;
}

void save_checkpoint(const std::string& path, const Denoiser& model, const nlohmann::json& extra) {
    nlohmann::json header = {{"format", "rawdiff-model"},
                             {"config", model.config()},
                             {"conditioning", conditioning_name(model.conditioning())}};
    if (model.adapters())
        header["lora"] = *model.adapters();
    if (!extra.is_null())
        header["extra"] = extra;
    write_checkpoint_file(path, header, model.params());
}

Denoiser load_checkpoint(const std::string& path) {
    auto file = read_checkpoint_file(path);
    try {
        if (file.header.value("format", std::string()) != "rawdiff-model")
            throw DataError(path + ": not a model checkpoint");
        const auto config = file.header.at("config").get<DenoiserConfig>();
        const auto conditioning = parse_conditioning(file.header.at("conditioning").get<std::string>());
        if (!file.header.contains("lora"))
            return Denoiser(config, conditioning, std::move(file.params));
        auto adapters = file.header.at("lora").get<LoraAdapterSet>();
        ParamStore base, values;
        for (const auto& [name, e] : file.params.entries())
            (is_lora_name(name) ? values : base).add(name, e.value);
        Denoiser model(config, conditioning, std::move(base));
        model.install_lora(std::move(adapters), values);
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": bad checkpoint header: " + e.what());
    } catch (const UsageError& e) {
        throw DataError(path + ": " + e.what());
    }
}

void save_adapters(const std::string& path, const Denoiser& model) {
    if (!model.adapters())
        throw UsageError("model has no adapters to save");
    nlohmann::json header = {{"format", "rawdiff-lora"},
                             {"lora", *model.adapters()},
                             {"base_hash", binio::hex64(base_params_hash(model.params()))}};
    write_checkpoint_file(path, header, adapter_params(*model.adapters(), model.params()));
}

void load_adapters(const std::string& path, Denoiser& model) {
    auto file = read_checkpoint_file(path);
    try {
        if (file.header.value("format", std::string()) != "rawdiff-lora")
            throw DataError(path + ": not an adapter checkpoint");
        const auto expected = file.header.at("base_hash").get<std::string>();
        const auto actual = binio::hex64(base_params_hash(model.params()));
        if (expected != actual)
            throw DataError(path + ": base-model hash mismatch (adapters trained on " + expected + ", model is " +
                            actual + ")");
        model.install_lora(file.header.at("lora").get<LoraAdapterSet>(), file.params);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": bad adapter header: " + e.what());
    }
}

} // namespace rawdiff
