#include "training/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "diffusion/sampler.hpp"

namespace rawdiff {

const char* train_mode_name(TrainMode m) {
    return m == TrainMode::Full ? "full" : "lora";
}

TrainMode parse_train_mode(const std::string& s) {
    if (s == "full")
        return TrainMode::Full;
    if (s == "lora")
        return TrainMode::Lora;
    throw UsageError("mode must be 'full' or 'lora', got '" + s + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate))
        throw UsageError("learning_rate must be > 0");
    if (steps < 1)
        throw UsageError("steps must be >= 1");
    if (batch_size < 1)
        throw UsageError("batch_size must be >= 1");
    if (precision != 64)
        throw UsageError("precision " + std::to_string(precision) + " unsupported; only 64 is implemented");
    if (checkpoint_every < 0)
        throw UsageError("checkpoint_every must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0))
        throw UsageError("adam hyperparameters need 0 <= beta < 1 and epsilon > 0");
    if (threads < 1)
        throw UsageError("threads must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"batch_size", c.batch_size}, {"steps", c.steps},
         {"learning_rate", c.learning_rate}, {"precision", c.precision},
         {"seed", c.seed},           {"checkpoint_every", c.checkpoint_every},
         {"mode", train_mode_name(c.mode)}, {"beta1", c.beta1},
         {"beta2", c.beta2},         {"epsilon", c.epsilon}};
}

void adam_update(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
                 double beta1, double beta2, double epsilon) {
    ++state.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (const auto& [name, g] : grads) {
        if (!params.contains(name) || !params.trainable(name))
            continue;
        Tensor& w = params.get_mut(name);
        if (g.shape() != w.shape())
            throw UsageError("adam: gradient for '" + name + "' has shape " + shape_string(g.shape()) +
                             ", parameter " + shape_string(w.shape()));
        auto [mi, fresh_m] = state.m.try_emplace(name, w.shape());
        auto [vi, fresh_v] = state.v.try_emplace(name, w.shape());
        if (mi->second.shape() != w.shape() || vi->second.shape() != w.shape())
            throw UsageError("adam: state shape mismatch for '" + name + "'");
        double* m = mi->second.data();
        double* v = vi->second.data();
        double* p = w.data();
        const double* gd = g.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1 * m[i] + (1 - beta1) * gd[i];
            v[i] = beta2 * v[i] + (1 - beta2) * gd[i] * gd[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
        }
    }
}

BatchNoise draw_batch_noise(std::size_t items, const Shape& shape, int T, Rng& rng) {
    BatchNoise n;
    for (std::size_t i = 0; i < items; ++i) {
        n.t.push_back(static_cast<int>(rng.uniform_int(1, T)));
        Tensor eps(shape);
        for (auto& v : eps.values())
            v = rng.normal();
        n.eps.push_back(std::move(eps));
    }
    return n;
}

namespace {

double l1(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

std::string list(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i)
        os << (i ? "," : "") << v[i];
    return os.str();
}

} // namespace

double batch_objective(const X0Predictor& predict, const std::vector<Sample>& batch, const DiffusionSchedule& sched,
                       const BatchNoise& noise) {
    if (batch.empty() || noise.t.size() != batch.size())
        throw UsageError("batch_objective: batch and noise sizes differ");
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor x0 = to_model_domain(batch[i].x0.planes());
        const Tensor y = to_model_domain(batch[i].y.planes());
        const Tensor xt = q_sample(x0, noise.t[i], noise.eps[i], sched);
        total += l1(predict(xt, y, sched.model_timestep(noise.t[i]), batch[i].cond), x0);
    }
    return total / static_cast<double>(batch.size());
}

StepResult train_step(Denoiser& model, const std::vector<Sample>& batch, const DiffusionSchedule& sched, Rng& rng,
                      AdamState& state, const TrainConfig& config) {
    if (batch.empty())
        throw UsageError("train_step: empty batch");
    const auto& shape = batch.front().x0.planes().shape();
    for (const auto& s : batch)
        if (s.x0.planes().shape() != shape || s.y.planes().shape() != shape)
            throw UsageError("train_step: batch items must share one patch shape");
    const BatchNoise noise = draw_batch_noise(batch.size(), shape, sched.steps(), rng);
    const auto& dg = model.graph(shape[1], shape[2]);
    const std::size_t n = batch.size();
    const double weight = 1.0 / static_cast<double>(n);

    std::vector<double> losses(n);
    std::vector<std::map<std::string, Tensor>> grads(n);
    const Denoiser& frozen = model;
    try {
        parallel_for(n, config.threads, [&](std::size_t i) {
            const Tensor x0 = to_model_domain(batch[i].x0.planes());
            NamedTensors in = frozen.make_inputs(q_sample(x0, noise.t[i], noise.eps[i], sched),
                                                 to_model_domain(batch[i].y.planes()),
                                                 sched.model_timestep(noise.t[i]), batch[i].cond);
            in.emplace("target", x0);
            const auto acts = eval_graph(dg.graph, in, frozen.params());
            losses[i] = acts[dg.loss][0];
            grads[i] = backprop(dg.graph, acts, dg.loss, frozen.params(), weight, false).params;
        });
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (t = " + list(noise.t) + ")");
    }

    StepResult r;
    r.t = noise.t;
    for (std::size_t i = 0; i < n; ++i)
        r.loss += losses[i];
    r.loss *= weight;
    if (!std::isfinite(r.loss))
        throw NumericError("non-finite loss " + std::to_string(r.loss) + " (t = " + list(r.t) + ")");

    // Fixed index order keeps the sum independent of the worker count.
    std::map<std::string, Tensor> total = std::move(grads[0]);
    for (std::size_t i = 1; i < n; ++i)
        for (auto& [name, g] : grads[i]) {
            auto& acc = total.at(name);
            for (std::size_t k = 0; k < acc.size(); ++k)
                acc[k] += g[k];
        }
    adam_update(model.params(), total, state, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    return r;
}

namespace {

std::string checkpoint_path(const std::string& dir, TrainMode mode, int step) {
    const std::string stem = mode == TrainMode::Lora ? "adapters" : "model";
    const std::string ext = mode == TrainMode::Lora ? ".rdla" : ".rdck";
    return (std::filesystem::path(dir) / (step > 0 ? stem + "_step" + std::to_string(step) + ext : stem + ext))
        .string();
}

void write_checkpoint(const std::string& path, const Denoiser& model, TrainMode mode, const nlohmann::json& extra) {
    if (mode == TrainMode::Lora)
        save_adapters(path, model);
    else
        save_checkpoint(path, model, extra);
}

} // namespace

TrainResult train(Denoiser& model, const PairDataset& data, const TrainConfig& config, const TrainOutput& output) {
    config.validate();
    if (config.mode == TrainMode::Lora && !model.adapters())
        throw UsageError("mode = lora requires attached adapters");
    if (config.mode == TrainMode::Full && model.adapters())
        throw UsageError("mode = full with attached adapters; merge or drop them first");
    if (data.size() == 0)
        throw DataError("training set is empty");
    const auto sched = cosine_schedule(model.config().diffusion_steps);

    std::ofstream log;
    if (!output.dir.empty()) {
        std::filesystem::create_directories(output.dir);
        log.open(std::filesystem::path(output.dir) / "metrics.jsonl", std::ios::trunc);
        if (!log)
            throw DataError("cannot write metrics log in '" + output.dir + "'");
    }

    Rng rng(config.seed);
    AdamState state;
    TrainResult result;
    std::vector<std::size_t> order(data.size());
    std::size_t cursor = order.size();
    const auto start = std::chrono::steady_clock::now();

    for (int step = 1; step <= config.steps; ++step) {
        std::vector<Sample> batch;
        for (int b = 0; b < config.batch_size; ++b) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
                cursor = 0;
            }
            batch.push_back(data.sample(order[cursor++], rng));
        }
        StepResult r;
        try {
            r = train_step(model, batch, sched, rng, state, config);
        } catch (const NumericError& e) {
            throw NumericError("training step " + std::to_string(step) + ": " + e.what());
        }
        result.losses.push_back(r.loss);

        StepLog entry{step, r.loss, config.learning_rate,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
        if (log.is_open())
            log << nlohmann::json{{"step", entry.step}, {"loss", entry.loss}, {"lr", entry.lr},
                                  {"wall_time", entry.wall_time}}
                       .dump()
                << '\n'
                << std::flush;
        if (output.on_step)
            output.on_step(entry);
        if (!output.dir.empty() && config.checkpoint_every > 0 && step % config.checkpoint_every == 0 &&
            step != config.steps) {
            result.checkpoints.push_back(checkpoint_path(output.dir, config.mode, step));
            write_checkpoint(result.checkpoints.back(), model, config.mode, output.checkpoint_extra);
        }
    }
    if (!output.dir.empty()) {
        result.checkpoints.push_back(checkpoint_path(output.dir, config.mode, 0));
        write_checkpoint(result.checkpoints.back(), model, config.mode, output.checkpoint_extra);
    }
    return result;
}

TrainResult finetune_lora(Denoiser& model, const PairDataset& pairs, TrainConfig config, int rank,
                          const std::vector<std::string>& sites, const TrainOutput& output) {
    config.mode = TrainMode::Lora;
    if (!model.adapters()) {
        Rng init(Rng::mix(config.seed ^ 0x10'4a00ULL));
        model.attach_lora(sites, rank, init);
    }
    return train(model, pairs, config, output);
}

double test_l1(const Denoiser& model, const std::vector<Sample>& samples, std::uint64_t seed) {
    if (samples.empty())
        throw UsageError("test_l1: no samples");
    const auto sched = cosine_schedule(model.config().diffusion_steps);
    const auto predict = model.predictor();
    std::vector<double> values(samples.size());
    parallel_for(samples.size(), thread_count(), [&](std::size_t i) {
        Rng rng = Rng::derive(seed, i);
        const auto noise = draw_batch_noise(1, samples[i].x0.planes().shape(), sched.steps(), rng);
        values[i] = batch_objective(predict, {samples[i]}, sched, noise);
    });
    double total = 0.0;
    for (double v : values)
        total += v;
    return total / static_cast<double>(values.size());
}

} // namespace rawdiff
