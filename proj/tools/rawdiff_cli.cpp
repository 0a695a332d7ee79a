// Command-line front end. Talks to the library through the C API only.
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rawdiff/rawdiff.h"

namespace {

struct Flag {
    const char* name;  // --kebab-case
    const char* help;
    bool is_switch = false;
};

struct Command {
    const char* name;
    const char* help;
    std::vector<Flag> flags;
};

const Flag kConfig{"--config", "key = value settings file; flags override it"};
const Flag kThreads{"--threads", "worker threads (default: RAWDIFF_THREADS or all cores)"};
const Flag kDeterministic{"--deterministic", "single-threaded numerics", true};
const Flag kSeed{"--seed", "random seed"};
const Flag kOut{"--out", "output directory"};

std::vector<Command> commands() {
    return {
        {"prepare",
         "materialize synthetic noisy/clean pairs from a manifest",
         {{"--manifest", "input manifest"}, kOut, {"--noise-level", "noise preset 0.1 or 0.3"},
          {"--sampled", "sample noise parameters per image", true},
          {"--preset-interpretation", "linear (default) or log preset values"},
          {"--patch-size", "crop size in mosaic pixels (0: full image)"}, kSeed, kConfig, kThreads, kDeterministic}},
        {"train",
         "phase-1 training on simulated noise",
         {kConfig, kOut, {"--manifest", "training manifest"}, kSeed, {"--steps", "optimizer steps"},
          {"--batch-size", "items per step"}, {"--learning-rate", "Adam step size"},
          {"--checkpoint-every", "checkpoint interval in steps"}, {"--conditioning", "text or null"},
          {"--noise-level", "0.1, 0.3 or sampled"}, kThreads, kDeterministic}},
        {"finetune",
         "LoRA fine-tuning on real pairs",
         {{"--base", "base checkpoint"}, {"--manifest", "real-pair manifest"}, kConfig, kOut, kSeed,
          {"--steps", "optimizer steps"}, {"--batch-size", "items per step"}, {"--learning-rate", "Adam step size"},
          {"--lora-rank", "adapter rank"}, {"--lora-scale", "adapter scale"},
          {"--lora-sites", "comma-separated parameter globs"}, kThreads, kDeterministic}},
        {"denoise",
         "denoise raw files by ancestral sampling",
         {{"--ckpt", "model checkpoint"}, {"--lora", "adapter checkpoint"}, {"--input", "raw file or directory"},
          {"--embedding-file", "caption embeddings (.rdem)"}, {"--embedding-index", "row of the embedding file"},
          {"--uncond", "use the null-conditioned model path", true}, {"--steps", "sampling steps"}, kSeed, kOut,
          kConfig, kThreads, kDeterministic}},
        {"evaluate",
         "PSNR (raw) and SSIM (rendered) over a manifest split",
         {{"--manifest", "evaluation manifest"}, {"--out", "report path (.json)"},
          {"--ckpt", "model checkpoint (omit for the identity baseline)"}, {"--lora", "adapter checkpoint"},
          {"--steps", "sampling steps"}, kSeed, {"--noise-level", "noise for synthetic entries"},
          {"--split", "train or test"}, {"--limit", "evaluate at most N images"},
          {"--uncond", "use the null-conditioned model path", true}, kConfig, kThreads, kDeterministic}},
        {"render",
         "render a raw file to PNG",
         {{"--input", "raw file"}, {"--out", "PNG or PPM path"}, {"--bit-depth", "8 or 16"}, kConfig}},
        {"toy-corpus",
         "write the procedural toy corpus",
         {kOut, kSeed, {"--classes", "caption classes"}, {"--train-per-class", "training images per class"},
          {"--test-per-class", "test images per class"}, {"--image-size", "image side in pixels"},
          {"--real-shot", "write simulated real pairs with this shot-noise level"},
          {"--real-read", "read-noise level of the simulated real pairs"},
          {"--real-gain", "brightness gain of the simulated noisy captures"}, kConfig}},
    };
}

std::string key_of(const char* flag) {
    std::string k(flag + 2);
    for (auto& ch : k)
        if (ch == '-')
            ch = '_';
    return k;
}

int fail(rd_status status, const std::string& message) {
    std::fprintf(stderr, "error: %s: %s\n", rd_status_name(status), message.c_str());
    return static_cast<int>(status);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rawdiff: raw-domain diffusion denoising"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(rd_version()) + " (build " + rd_build_id() + ")");

    const auto cmds = commands();
    std::map<std::string, std::map<std::string, std::string>> values;
    std::map<std::string, std::map<std::string, bool>> switches;
    std::map<std::string, std::vector<std::string>> overrides;
    for (const auto& cmd : cmds) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        for (const auto& f : cmd.flags) {
            if (f.is_switch)
                sub->add_flag(f.name, switches[cmd.name][key_of(f.name)], f.help);
            else
                sub->add_option(f.name, values[cmd.name][key_of(f.name)], f.help);
        }
        sub->add_option("--set", overrides[cmd.name], "extra key=value setting (repeatable)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(RD_ERR_USAGE, e.what());
    }

    for (const auto& cmd : cmds) {
        auto* sub = app.get_subcommand(cmd.name);
        if (!sub->parsed())
            continue;
        rd_options* opts = rd_options_new();
        if (!opts)
            return fail(RD_ERR_INTERNAL, "out of memory");
        rd_status st = RD_OK;
        for (const auto& kv : overrides[cmd.name]) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0) {
                rd_options_free(opts);
                return fail(RD_ERR_USAGE, "--set expects key=value, got '" + kv + "'");
            }
            if (st == RD_OK)
                st = rd_options_set(opts, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
        }
        for (const auto& f : cmd.flags) {
            const auto key = key_of(f.name);
            if (sub->count(f.name) == 0)
                continue;
            const std::string value = f.is_switch ? "true" : values[cmd.name][key];
            if (st == RD_OK)
                st = rd_options_set(opts, key.c_str(), value.c_str());
        }
        char* summary = nullptr;
        if (st == RD_OK)
            st = rd_run(cmd.name, opts, &summary);
        rd_options_free(opts);
        if (st != RD_OK)
            return fail(st, rd_last_error());
        std::printf("%s\n", summary);
        rd_string_free(summary);
        return 0;
    }
    return fail(RD_ERR_USAGE, "no command given");
}
