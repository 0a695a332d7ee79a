#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dataset/samples.hpp"
#include "denoiser/denoiser.hpp"
#include "training/training.hpp"
#include "workflow/kv_config.hpp"

namespace rawdiff {

/// Build identifier baked in at configure time (short git revision).
const char* build_id();

/// Model, training and noise settings read from a config. Unknown keys are
/// rejected by the commands, not here.
DenoiserConfig denoiser_config_from(const KeyValueConfig& c, DenoiserConfig base = {});
TrainConfig train_config_from(const KeyValueConfig& c, TrainConfig base = {});
/// "0.1" / "0.3" presets or "sampled".
NoiseSource noise_source_from(const KeyValueConfig& c, const std::string& fallback);

/// Pads y (edge replication) to the model's size multiple, runs ancestral
/// sampling over `steps` respaced steps and crops back.
RawImage denoise_raw(const Denoiser& model, const RawImage& y, const ConditionVector& cond, int steps,
                     std::uint64_t seed);

/// Writes run.json (command, resolved settings, build id) into `dir`.
void write_run_snapshot(const std::string& dir, const std::string& command, const KeyValueConfig& settings);

/// Hex FNV-1a of the sorted settings dump.
std::string config_hash(const KeyValueConfig& c);

/// Executes a subcommand (prepare, train, finetune, denoise, evaluate,
/// render, toy-corpus). A `config` entry names a key-value file whose
/// settings the other entries override. Returns a JSON summary.
nlohmann::json run_command(const std::string& command, const KeyValueConfig& flags);

std::vector<std::string> command_names();

} // namespace rawdiff
