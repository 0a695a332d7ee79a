#include "workflow/workflow.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "common/binio.hpp"
#include "common/error.hpp"
#include "common/parallel.hpp"
#include "dataset/embeddings.hpp"
#include "dataset/manifest.hpp"
#include "dataset/toy_corpus.hpp"
#include "diffusion/sampler.hpp"
#include "metrics/metrics.hpp"
#include "raw/image_io.hpp"
#include "raw/isp.hpp"

#ifndef RAWDIFF_BUILD_ID
#define RAWDIFF_BUILD_ID "unknown"
#endif

namespace rawdiff {

namespace fs = std::filesystem;
using nlohmann::json;

const char* build_id() {
    return RAWDIFF_BUILD_ID;
}

namespace {

const std::set<std::string> kModelKeys{"base_channels",  "depth",           "blocks_per_level", "time_embed_dim",
                                       "patch_size",     "diffusion_steps", "conditioning"};
const std::set<std::string> kTrainKeys{"batch_size", "steps",   "learning_rate", "precision", "seed",
                                       "checkpoint_every", "beta1", "beta2", "epsilon"};
const std::set<std::string> kRuntimeKeys{"config", "threads", "deterministic"};
const std::set<std::string> kNoiseKeys{"noise_level", "preset_interpretation"};

std::set<std::string> keys(std::initializer_list<const std::set<std::string>*> groups,
                           std::initializer_list<const char*> extra) {
    std::set<std::string> out;
    for (const auto* g : groups)
        out.insert(g->begin(), g->end());
    out.insert(extra.begin(), extra.end());
    return out;
}

std::uint64_t id_hash(const std::string& s) {
    return binio::fnv1a({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

// Settings file first, flags on top.
KeyValueConfig resolve(const KeyValueConfig& flags) {
    KeyValueConfig c;
    if (flags.has("config"))
        c = KeyValueConfig::load(flags.required("config"));
    c.merge(flags);
    return c;
}

void apply_runtime(const KeyValueConfig& c) {
    if (c.boolean("deterministic", false))
        set_thread_count(1);
    else if (c.has("threads")) {
        const long n = c.integer("threads", 1);
        if (n < 1)
            throw UsageError("threads must be >= 1");
        set_thread_count(static_cast<std::size_t>(n));
    }
}

int int_setting(const KeyValueConfig& c, const std::string& key, int fallback) {
    const long v = c.integer(key, fallback);
    if (v < INT32_MIN || v > INT32_MAX)
        throw UsageError("setting '" + key + "' out of range");
    return static_cast<int>(v);
}

EmbeddingFile manifest_embeddings(const Manifest& m) {
    if (m.embeddings.empty())
        throw DataError("manifest names no embedding file");
    auto e = load_embeddings(m.resolve(m.embeddings));
    m.validate(e.count);
    return e;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!item.empty())
            out.push_back(item);
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return out;
}

Tensor pad_planes(const Tensor& p, std::size_t h, std::size_t w) {
    Tensor out({4, h, w});
    const std::size_t ph = p.dim(1), pw = p.dim(2);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out.at(c, y, x) = p.at(c, std::min(y, ph - 1), std::min(x, pw - 1));
    return out;
}

Tensor crop_planes(const Tensor& p, std::size_t h, std::size_t w) {
    Tensor out({4, h, w});
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out.at(c, y, x) = p.at(c, y, x);
    return out;
}

Denoiser load_model(const KeyValueConfig& c) {
    auto model = load_checkpoint(c.required("ckpt"));
    if (c.has("lora"))
        load_adapters(c.required("lora"), model);
    return model;
}

json snapshot_json(const std::string& command, const KeyValueConfig& settings) {
    return {{"command", command},
            {"settings", settings.values()},
            {"config_hash", config_hash(settings)},
            {"build_id", build_id()}};
}

// ---------------------------------------------------------------- commands

json cmd_prepare(const KeyValueConfig& c) {
    c.require_known(keys({&kRuntimeKeys, &kNoiseKeys}, {"manifest", "out", "seed", "patch_size", "sampled"}),
                    "prepare");
    const auto out = c.required("out");
    const auto manifest = load_manifest(c.required("manifest"));
    const auto embeddings = manifest_embeddings(manifest);
    const auto seed = c.u64("seed", 0);
    const auto patch = static_cast<std::size_t>(c.integer("patch_size", 0));
    const auto noise = c.boolean("sampled", false) ? NoiseSource::sampled() : noise_source_from(c, "0.1");

    Manifest prepared;
    prepared.embeddings = "embeddings.rdem";
    prepared.isp = manifest.isp;
    std::vector<Sample> samples(manifest.entries.size());
    std::vector<char> skip(manifest.entries.size(), 0);
    parallel_for(manifest.entries.size(), thread_count(), [&](std::size_t i) {
        const auto& e = manifest.entries[i];
        if (e.is_real_pair()) {
            skip[i] = 1;
            return;
        }
        Rng rng = Rng::derive(seed, id_hash(e.id));
        samples[i] = make_synthetic_sample(e.id, load_clean_raw(manifest, e), embeddings.condition(e.embedding_index),
                                           e.embedding_index, noise, patch, rng);
    });
    json params = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (skip[i])
            continue;
        const auto& e = manifest.entries[i];
        const auto& s = samples[i];
        ManifestEntry pe;
        pe.id = e.id;
        pe.clean = "pairs/" + e.id + "_clean.rdrw";
        pe.noisy = "pairs/" + e.id + "_noisy.rdrw";
        pe.embedding_index = e.embedding_index;
        pe.split = e.split;
        pe.gain = 1.0;
        write_raw((fs::path(out) / pe.clean).string(), s.x0);
        write_raw((fs::path(out) / *pe.noisy).string(), s.y);
        prepared.entries.push_back(pe);
        params.push_back({{"id", e.id},
                          {"lambda_shot", s.noise.lambda_shot},
                          {"lambda_read", s.noise.lambda_read},
                          {"crop_y", s.crop_y},
                          {"crop_x", s.crop_x}});
    }
    save_embeddings((fs::path(out) / prepared.embeddings).string(), embeddings);
    const auto manifest_path = (fs::path(out) / "manifest.json").string();
    save_manifest(manifest_path, prepared);
    const auto text = params.dump(2) + "\n";
    binio::write_file((fs::path(out) / "noise_params.json").string(),
                      {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    write_run_snapshot(out, "prepare", c);
    return {{"manifest", manifest_path}, {"pairs", prepared.entries.size()}};
}

json cmd_train(const KeyValueConfig& c) {
    c.require_known(keys({&kRuntimeKeys, &kNoiseKeys, &kModelKeys, &kTrainKeys}, {"manifest", "out"}), "train");
    const auto out = c.required("out");
    const auto config = denoiser_config_from(c);
    auto train_cfg = train_config_from(c);
    if (train_cfg.mode != TrainMode::Full)
        throw UsageError("train runs in full mode; use finetune for adapters");
    const auto conditioning = parse_conditioning(c.str("conditioning", "text"));
    const auto manifest = load_manifest(c.required("manifest"));
    const auto embeddings = manifest_embeddings(manifest);
    const auto data = SyntheticDataset::from_manifest(manifest, Split::Train, embeddings,
                                                      noise_source_from(c, "sampled"),
                                                      static_cast<std::size_t>(config.patch_size));
    Rng init = Rng::derive(train_cfg.seed, 0x1417);
    auto model = Denoiser::create(config, conditioning, init);
    write_run_snapshot(out, "train", c);
    TrainOutput output{out, {}, snapshot_json("train", c)};
    const auto result = train(model, data, train_cfg, output);
    return {{"checkpoint", result.checkpoints.back()}, {"final_loss", result.losses.back()}};
}

json cmd_finetune(const KeyValueConfig& c) {
    c.require_known(keys({&kRuntimeKeys, &kTrainKeys}, {"base", "manifest", "out", "lora_rank", "lora_scale",
                                                        "lora_sites", "patch_size"}),
                    "finetune");
    const auto out = c.required("out");
    const auto base = c.required("base"), manifest_path = c.required("manifest");
    auto model = load_checkpoint(base);
    if (model.adapters())
        throw UsageError("base checkpoint already carries adapters");
    auto train_cfg = train_config_from(c);
    train_cfg.mode = TrainMode::Lora;
    const auto manifest = load_manifest(manifest_path);
    const auto embeddings = manifest_embeddings(manifest);
    const auto patch = static_cast<std::size_t>(c.integer("patch_size", model.config().patch_size));
    const auto pairs = RealPairDataset::from_manifest(manifest, Split::Train, embeddings, patch);
    const auto sites = c.has("lora_sites") ? split_list(c.required("lora_sites")) : default_lora_sites();
    Rng init = Rng::derive(train_cfg.seed, 0x10'4a);
    model.attach_lora(sites, int_setting(c, "lora_rank", kDefaultLoraRank), init, c.real("lora_scale", 1.0));
    write_run_snapshot(out, "finetune", c);
    const auto result = train(model, pairs, train_cfg, TrainOutput{out, {}, {}});
    return {{"adapters", result.checkpoints.back()},
            {"final_loss", result.losses.back()},
            {"adapter_parameters", model.adapters()->parameter_count(model.params())}};
}

std::vector<std::string> raw_inputs(const std::string& input) {
    std::vector<std::string> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file() && has_extension(e.path().string(), ".rdrw"))
                files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw DataError("no .rdrw files in '" + input + "'");
    } else {
        files.push_back(input);
    }
    return files;
}

ConditionVector condition_for(const Denoiser& model, const KeyValueConfig& c, const EmbeddingFile* embeddings,
                              std::size_t index) {
    const bool uncond = c.boolean("uncond", false);
    if (uncond && model.conditioning() != Conditioning::Null)
        throw UsageError("--uncond requires a checkpoint trained with null conditioning");
    if (model.conditioning() == Conditioning::Null)
        return ConditionVector::null();
    if (!embeddings)
        throw UsageError("text-conditioned model needs --embedding-file and --embedding-index");
    return embeddings->condition(index);
}

int default_steps(const Denoiser& model, const KeyValueConfig& c) {
    return int_setting(c, "steps", std::min(50, model.config().diffusion_steps));
}

json cmd_denoise(const KeyValueConfig& c) {
    c.require_known(keys({&kRuntimeKeys}, {"ckpt", "lora", "input", "embedding_file", "embedding_index", "uncond",
                                            "steps", "seed", "out"}),
                    "denoise");
    const auto out = c.required("out");
    const auto input = c.required("input");
    const auto model = load_model(c);
    std::optional<EmbeddingFile> embeddings;
    if (c.has("embedding_file"))
        embeddings = load_embeddings(c.required("embedding_file"));
    const auto index = static_cast<std::size_t>(c.integer("embedding_index", 0));
    const auto cond = condition_for(model, c, embeddings ? &*embeddings : nullptr, index);
    const int steps = default_steps(model, c);
    const auto seed = c.u64("seed", 0);
    const auto files = raw_inputs(input);
    std::vector<std::string> written(files.size());
    parallel_for(files.size(), thread_count(), [&](std::size_t i) {
        const auto stem = fs::path(files[i]).stem().string();
        const auto y = read_raw(files[i]);
        const auto x = denoise_raw(model, y, cond, steps, Rng::derive(seed, id_hash(stem)).next_u64());
        written[i] = (fs::path(out) / (stem + ".rdrw")).string();
        write_raw(written[i], x);
    });
    write_run_snapshot(out, "denoise", c);
    return {{"outputs", written}};
}

json cmd_evaluate(const KeyValueConfig& c) {
    c.require_known(keys({&kRuntimeKeys, &kNoiseKeys}, {"manifest", "out", "ckpt", "lora", "steps", "seed", "split",
                                                         "limit", "uncond"}),
                    "evaluate");
    const auto out = c.required("out");
    const auto manifest = load_manifest(c.required("manifest"));
    const auto embeddings = manifest_embeddings(manifest);
    const auto split = parse_split(c.str("split", "test"));
    const auto seed = c.u64("seed", 0);
    const auto noise = noise_source_from(c, "0.1");
    std::optional<Denoiser> model;
    if (c.has("ckpt"))
        model.emplace(load_model(c));
    auto entries = manifest.split(split);
    if (const long limit = c.integer("limit", 0); limit > 0 && static_cast<std::size_t>(limit) < entries.size())
        entries.resize(static_cast<std::size_t>(limit));
    if (entries.empty())
        throw DataError(std::string("manifest has no ") + split_name(split) + " entries");
    const int steps = model ? default_steps(*model, c) : 0;

    std::vector<json> rows(entries.size());
    std::vector<double> psnr(entries.size()), ssim(entries.size());
    parallel_for(entries.size(), thread_count(), [&](std::size_t i) {
        const auto& e = *entries[i];
        Rng rng = Rng::derive(seed, id_hash(e.id));
        Sample s;
        if (e.is_real_pair()) {
            s = load_real_pair(manifest, e, embeddings);
        } else {
            s = make_synthetic_sample(e.id, load_clean_raw(manifest, e), embeddings.condition(e.embedding_index),
                                      e.embedding_index, noise, 0, rng);
        }
        RawImage estimate = s.y;
        if (model)
            estimate = denoise_raw(*model, s.y, condition_for(*model, c, &embeddings, e.embedding_index), steps,
                                   rng.next_u64());
        estimate.isp() = s.x0.isp();
        psnr[i] = psnr_raw(estimate, s.x0);
        ssim[i] = ssim_rgb(isp_render(estimate), isp_render(s.x0));
        rows[i] = {{"id", e.id}, {"psnr_raw", psnr_report(psnr[i])}, {"ssim_rgb", ssim[i]}};
    });
    double mp = 0.0, ms = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        mp += psnr_report(psnr[i]);
        ms += ssim[i];
    }
    json report = {{"model", model ? json(c.required("ckpt")) : json(nullptr)},
                   {"lora", c.has("lora") ? json(c.required("lora")) : json(nullptr)},
                   {"baseline", model ? "" : "identity (noisy input scored against clean)"},
                   {"split", split_name(split)},
                   {"steps", steps},
                   {"seed", seed},
                   {"images", rows},
                   {"mean_psnr_raw", mp / static_cast<double>(rows.size())},
                   {"mean_ssim_rgb", ms / static_cast<double>(rows.size())},
                   {"psnr_cap_db", kPsnrReportCap},
                   {"note", "LPIPS and DISTS are not computed"},
                   {"config_hash", config_hash(c)},
                   {"build_id", build_id()}};
    const auto text = report.dump(2) + "\n";
    binio::write_file(out, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    return {{"report", out},
            {"mean_psnr_raw", report["mean_psnr_raw"]},
            {"mean_ssim_rgb", report["mean_ssim_rgb"]}};
}

json cmd_render(const KeyValueConfig& c) {
    c.require_known(keys({&kRuntimeKeys}, {"input", "out", "bit_depth"}), "render");
    const auto input = c.required("input"), out = c.required("out");
    const int bits = int_setting(c, "bit_depth", 8);
    write_rgb(out, isp_render(read_raw(input)), bits);
    return {{"image", out}};
}

json cmd_toy_corpus(const KeyValueConfig& c) {
    c.require_known(keys({&kRuntimeKeys}, {"out", "seed", "classes", "train_per_class", "test_per_class",
                                            "image_size", "real_shot", "real_read", "real_gain"}),
                    "toy-corpus");
    ToyCorpusOptions o;
    o.seed = c.u64("seed", o.seed);
    o.classes = int_setting(c, "classes", o.classes);
    o.train_per_class = int_setting(c, "train_per_class", o.train_per_class);
    o.test_per_class = int_setting(c, "test_per_class", o.test_per_class);
    o.image_size = int_setting(c, "image_size", o.image_size);
    if (c.has("real_shot") || c.has("real_read")) {
        NoiseParams p{c.real("real_shot", 0.02), c.real("real_read", 0.005)};
        if (!p.valid())
            throw UsageError("real_shot must be > 0 and real_read >= 0");
        o.real_noise = p;
        o.real_gain = c.real("real_gain", 1.0);
    }
    const auto out = c.required("out");
    const auto path = write_toy_corpus(out, make_toy_corpus(o));
    write_run_snapshot(out, "toy-corpus", c);
    return {{"manifest", path}};
}

} // namespace

DenoiserConfig denoiser_config_from(const KeyValueConfig& c, DenoiserConfig d) {
    d.base_channels = int_setting(c, "base_channels", d.base_channels);
    d.depth = int_setting(c, "depth", d.depth);
    d.blocks_per_level = int_setting(c, "blocks_per_level", d.blocks_per_level);
    d.time_embed_dim = int_setting(c, "time_embed_dim", d.time_embed_dim);
    d.patch_size = int_setting(c, "patch_size", d.patch_size);
    d.diffusion_steps = int_setting(c, "diffusion_steps", d.diffusion_steps);
    d.validate();
    return d;
}

TrainConfig train_config_from(const KeyValueConfig& c, TrainConfig t) {
    t.batch_size = int_setting(c, "batch_size", t.batch_size);
    t.steps = int_setting(c, "steps", t.steps);
    t.learning_rate = c.real("learning_rate", t.learning_rate);
    t.precision = int_setting(c, "precision", t.precision);
    t.seed = c.u64("seed", t.seed);
    t.checkpoint_every = int_setting(c, "checkpoint_every", t.checkpoint_every);
    t.beta1 = c.real("beta1", t.beta1);
    t.beta2 = c.real("beta2", t.beta2);
    t.epsilon = c.real("epsilon", t.epsilon);
    t.threads = thread_count();
    t.validate();
    return t;
}

NoiseSource noise_source_from(const KeyValueConfig& c, const std::string& fallback) {
    const auto level = c.str("noise_level", fallback);
    if (level == "sampled")
        return NoiseSource::sampled();
    return NoiseSource::preset(
        preset_level(level, parse_preset_interpretation(c.str("preset_interpretation", "linear"))));
}

RawImage denoise_raw(const Denoiser& model, const RawImage& y, const ConditionVector& cond, int steps,
                     std::uint64_t seed) {
    const int T = model.config().diffusion_steps;
    if (steps < 1 || steps > T)
        throw UsageError("steps must be in [1, " + std::to_string(T) + "], got " + std::to_string(steps));
    const std::size_t m = std::size_t{1} << model.config().depth;
    const std::size_t h = y.plane_height(), w = y.plane_width();
    const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
    const auto full = cosine_schedule(T);
    const auto sched = steps == T ? full : respace(full, steps);
    Rng rng(seed);
    if (ph == h && pw == w)
        return ddpm_sample(model.predictor(), y, cond, sched, rng);
    const RawImage padded(pad_planes(y.planes(), ph, pw), y.isp());
    const auto out = ddpm_sample(model.predictor(), padded, cond, sched, rng);
    return RawImage(crop_planes(out.planes(), h, w), y.isp());
}

std::string config_hash(const KeyValueConfig& c) {
    const auto d = c.dump();
    return binio::hex64(binio::fnv1a({reinterpret_cast<const std::uint8_t*>(d.data()), d.size()}));
}

void write_run_snapshot(const std::string& dir, const std::string& command, const KeyValueConfig& settings) {
    const auto j = snapshot_json(command, settings).dump(2) + "\n";
    binio::write_file((fs::path(dir) / "run.json").string(), {reinterpret_cast<const std::uint8_t*>(j.data()), j.size()});
    const auto kv = "# " + command + " (build " + build_id() + ")\n" + settings.dump();
    binio::write_file((fs::path(dir) / "config.txt").string(),
                      {reinterpret_cast<const std::uint8_t*>(kv.data()), kv.size()});
}

std::vector<std::string> command_names() {
    return {"prepare", "train", "finetune", "denoise", "evaluate", "render", "toy-corpus"};
}

json run_command(const std::string& command, const KeyValueConfig& flags) {
    const auto c = resolve(flags);
    apply_runtime(c);
    if (command == "prepare")
        return cmd_prepare(c);
    if (command == "train")
        return cmd_train(c);
    if (command == "finetune")
        return cmd_finetune(c);
    if (command == "denoise")
        return cmd_denoise(c);
    if (command == "evaluate")
        return cmd_evaluate(c);
    if (command == "render")
        return cmd_render(c);
    if (command == "toy-corpus")
        return cmd_toy_corpus(c);
    throw UsageError("unknown command '" + command + "'");
}

} // namespace rawdiff
