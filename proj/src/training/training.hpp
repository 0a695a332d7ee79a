#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset/samples.hpp"
#include "denoiser/denoiser.hpp"
#include "diffusion/schedule.hpp"

namespace rawdiff {

enum class TrainMode { Full, Lora };
const char* train_mode_name(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
    int batch_size = 4;
    int steps = 1000;
    double learning_rate = 1e-3;
    int precision = 64;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0: final checkpoint only
    TrainMode mode = TrainMode::Full;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t threads = 1;   // workers for per-item forward/backward

    /// Throws UsageError on invalid values.
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);

/// First and second moments per parameter plus the step counter.
struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    long step = 0;
};

/// One Adam step with bias correction over the gradients given. Frozen
/// parameters are never written, even if a gradient is supplied.
void adam_update(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
                 double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

/// Timesteps and forward-process noise for one batch, drawn item by item.
struct BatchNoise {
    std::vector<int> t;
    std::vector<Tensor> eps;
};
BatchNoise draw_batch_noise(std::size_t items, const Shape& shape, int T, Rng& rng);

/// Mean over items of L1(predict(x_t, y, t, cond), x0), in the model domain,
/// with x_t = q_sample(x0, t, eps).
double batch_objective(const X0Predictor& predict, const std::vector<Sample>& batch, const DiffusionSchedule& sched,
                       const BatchNoise& noise);

struct StepResult {
    double loss = 0.0;
    std::vector<int> t;
};

/// Draws (t, eps) for every item from `rng`, backpropagates the mean L1
/// objective and applies Adam to the trainable parameters.
StepResult train_step(Denoiser& model, const std::vector<Sample>& batch, const DiffusionSchedule& sched, Rng& rng,
                      AdamState& state, const TrainConfig& config);

struct StepLog {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_time = 0.0;
};

struct TrainOutput {
    std::string dir;  // metrics.jsonl and checkpoints; empty disables file output
    std::function<void(const StepLog&)> on_step;
    nlohmann::json checkpoint_extra;  // stored in every checkpoint header
};

struct TrainResult {
    std::vector<double> losses;
    std::vector<std::string> checkpoints;
};

/// Epoch-shuffled minibatches from `data`; every draw (order, crops,
/// synthetic noise, t, eps) comes from one stream seeded by config.seed.
/// Lora mode requires attached adapters and writes adapter-only checkpoints.
TrainResult train(Denoiser& model, const PairDataset& data, const TrainConfig& config,
                  const TrainOutput& output = {});

/// LoRA phase: attaches adapters when none are present, then trains them.
TrainResult finetune_lora(Denoiser& model, const PairDataset& pairs, TrainConfig config, int rank,
                          const std::vector<std::string>& sites, const TrainOutput& output = {});

/// Held-out objective with (t, eps) for sample i drawn from (seed, i).
double test_l1(const Denoiser& model, const std::vector<Sample>& samples, std::uint64_t seed);

} // namespace rawdiff
