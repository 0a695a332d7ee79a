#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "common/binio.hpp"
#include "common/error.hpp"
#include "dataset/toy_corpus.hpp"
#include "training/training.hpp"
#include "test_util.hpp"

using namespace rawdiff;
using testutil::bit_equal;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.base_channels = 8;
    c.depth = 1;
    c.blocks_per_level = 1;
    c.time_embed_dim = 16;
    c.patch_size = 16;
    c.diffusion_steps = 16;
    return c;
}

const ToyCorpus& corpus() {
    static const ToyCorpus c = [] {
        ToyCorpusOptions o;
        o.classes = 4;
        o.train_per_class = 2;
        o.test_per_class = 2;
        o.image_size = 20;
        o.seed = 3;
        return make_toy_corpus(o);
    }();
    return c;
}

SyntheticDataset train_set() {
    return SyntheticDataset(toy_items(corpus(), Split::Train), NoiseSource::preset({0.1, 0.2}), 16);
}

TrainConfig quick(int steps, std::uint64_t seed = 1) {
    TrainConfig c;
    c.steps = steps;
    c.seed = seed;
    c.batch_size = 2;
    return c;
}

Denoiser fresh(std::uint64_t seed = 9, Conditioning cond = Conditioning::Text) {
    Rng rng(seed);
    return Denoiser::create(tiny_config(), cond, rng);
}

bool same_params(const ParamStore& a, const ParamStore& b) {
    if (a.names() != b.names())
        return false;
    for (const auto& n : a.names())
        if (!bit_equal(a.get(n), b.get(n)))
            return false;
    return true;
}

} // namespace

TEST_CASE("train config validation") {
    auto bad = [](auto edit) {
        TrainConfig c;
        edit(c);
        return c;
    };
    CHECK_NOTHROW(TrainConfig{}.validate());
    CHECK_THROWS_AS(bad([](auto& c) { c.learning_rate = 0; }).validate(), UsageError);
    CHECK_THROWS_AS(bad([](auto& c) { c.steps = 0; }).validate(), UsageError);
    CHECK_THROWS_AS(bad([](auto& c) { c.batch_size = 0; }).validate(), UsageError);
    CHECK_THROWS_AS(bad([](auto& c) { c.precision = 32; }).validate(), UsageError);
    CHECK_THROWS_AS(bad([](auto& c) { c.beta2 = 1.0; }).validate(), UsageError);
    CHECK(parse_train_mode("lora") == TrainMode::Lora);
    CHECK(std::string(train_mode_name(TrainMode::Full)) == "full");
    CHECK_THROWS_AS(parse_train_mode("partial"), UsageError);
}

TEST_CASE("adam") {
    ParamStore ps;
    ps.add("w", Tensor::vector({0.5, -1.0, 2.0}));
    ps.add("frozen", Tensor::vector({1.0}), false);
    SUBCASE("zero gradient leaves parameters unchanged") {
        AdamState st;
        const auto before = ps.get("w");
        adam_update(ps, {{"w", Tensor({3})}}, st, 1e-3);
        CHECK(bit_equal(ps.get("w"), before));
    }
    SUBCASE("first step moves against the gradient by about lr") {
        AdamState st;
        const auto before = ps.get("w");
        const double lr = 1e-3;
        adam_update(ps, {{"w", Tensor::vector({3.0, -0.2, 1e-3})}}, st, lr);
        for (std::size_t i = 0; i < 3; ++i) {
            const double step = ps.get("w")[i] - before[i];
            CHECK(std::abs(step) <= lr * (1 + 1e-6));
            CHECK(std::abs(step) > lr * 0.9);
        }
        CHECK(ps.get("w")[0] < before[0]);
        CHECK(ps.get("w")[1] > before[1]);
        CHECK(st.step == 1);
    }
    SUBCASE("frozen parameters are never written") {
        AdamState st;
        adam_update(ps, {{"w", Tensor::vector({1, 1, 1})}, {"frozen", Tensor::vector({5.0})}}, st, 0.1);
        CHECK(ps.get("frozen")[0] == 1.0);
    }
    SUBCASE("scalar quadratic converges") {
        ParamStore q;
        q.add("x", Tensor::scalar(0.0));
        AdamState st;
        for (int i = 0; i < 5000; ++i) {
            const double x = q.get("x")[0];
            adam_update(q, {{"x", Tensor::scalar(2.0 * (x - 1.5))}}, st, 0.01);
        }
        CHECK(std::abs(q.get("x")[0] - 1.5) < 1e-6);
    }
}

TEST_CASE("objective") {
    const auto data = train_set();
    const auto batch = fixed_samples(data, 4, 5);
    const auto sched = cosine_schedule(16);
    Rng rng(1);
    const auto noise = draw_batch_noise(batch.size(), batch[0].x0.planes().shape(), 16, rng);
    SUBCASE("a perfect predictor has zero loss") {
        std::size_t call = 0;
        const X0Predictor oracle = [&](const Tensor&, const Tensor&, int, const ConditionVector&) {
            return to_model_domain(batch[call++].x0.planes());
        };
        CHECK(batch_objective(oracle, batch, sched, noise) == 0.0);
    }
    SUBCASE("a fresh model scores the mean absolute clean value") {
        const auto model = fresh();
        double want = 0.0;
        for (const auto& s : batch) {
            const auto x0 = to_model_domain(s.x0.planes());
            double l = 0.0;
            for (double v : x0.values())
                l += std::abs(v);
            want += l / double(x0.size());
        }
        want /= double(batch.size());
        CHECK(batch_objective(model.predictor(), batch, sched, noise) == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("t covers Uniform{1..T}") {
        // chi-square with 50 T draws per epoch-sized run at T = 64
        const int T = 64, draws = 64 * T;
        Rng r(2);
        std::vector<int> counts(T + 1);
        for (int i = 0; i < draws; ++i) {
            const auto nz = draw_batch_noise(1, {1}, T, r);
            ++counts[std::size_t(nz.t[0])];
        }
        CHECK(counts[0] == 0);
        const double expected = double(draws) / T;
        double chi2 = 0.0;
        for (int t = 1; t <= T; ++t)
            chi2 += (counts[std::size_t(t)] - expected) * (counts[std::size_t(t)] - expected) / expected;
        CHECK(chi2 < 92.010);  // 99th percentile, 63 degrees of freedom
    }
}

TEST_CASE("train_step") {
    const auto data = train_set();
    const auto batch = fixed_samples(data, 2, 7);
    const auto sched = cosine_schedule(16);
    SUBCASE("same seed, same trajectory, any thread count") {
        std::vector<std::vector<double>> runs;
        std::vector<ParamStore> finals;
        for (std::size_t threads : {1u, 1u, 3u}) {
            auto model = fresh();
            Rng rng(11);
            AdamState st;
            TrainConfig c = quick(5);
            c.threads = threads;
            std::vector<double> losses;
            for (int i = 0; i < 5; ++i)
                losses.push_back(train_step(model, batch, sched, rng, st, c).loss);
            runs.push_back(losses);
            finals.push_back(model.params());
        }
        for (std::size_t k = 1; k < runs.size(); ++k) {
            CHECK(runs[k] == runs[0]);
            CHECK(same_params(finals[k], finals[0]));
        }
    }
    SUBCASE("non-finite values abort with diagnostics") {
        auto model = fresh();
        model.params().get_mut("out_conv.bias")[2] = std::nan("");
        Rng rng(1);
        AdamState st;
        try {
            train_step(model, batch, sched, rng, st, quick(1));
            FAIL("expected a numeric error");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("t = ") != std::string::npos);
        }
    }
    SUBCASE("batch items must agree in shape") {
        auto model = fresh();
        auto mixed = batch;
        mixed[1].x0 = RawImage(Tensor({4, 4, 4}));
        mixed[1].y = mixed[1].x0;
        Rng rng(1);
        AdamState st;
        CHECK_THROWS_AS(train_step(model, mixed, sched, rng, st, quick(1)), UsageError);
    }
}

TEST_CASE("training loop") {
    const auto data = train_set();
    SUBCASE("outputs") {
        const auto dir = testutil::scratch_dir("train");
        auto model = fresh();
        TrainConfig c = quick(6);
        c.checkpoint_every = 4;
        int calls = 0;
        const auto result = train(model, data, c, {dir, [&](const StepLog&) { ++calls; }, {{"tag", 1}}});
        CHECK(calls == 6);
        CHECK(result.losses.size() == 6);
        REQUIRE(result.checkpoints.size() == 2);
        CHECK(std::filesystem::path(result.checkpoints[0]).filename() == "model_step4.rdck");
        CHECK(std::filesystem::path(result.checkpoints[1]).filename() == "model.rdck");
        CHECK(same_params(load_checkpoint(result.checkpoints[1]).params(), model.params()));
        std::ifstream log(dir + "/metrics.jsonl");
        std::string line;
        int n = 0;
        while (std::getline(log, line)) {
            const auto j = nlohmann::json::parse(line);
            ++n;
            CHECK(j.at("step") == n);
            CHECK(j.at("loss").get<double>() == result.losses[std::size_t(n - 1)]);
            CHECK(j.at("lr").get<double>() == c.learning_rate);
            CHECK(j.contains("wall_time"));
        }
        CHECK(n == 6);
    }
    SUBCASE("determinism of the whole loop") {
        auto a = fresh(), b = fresh();
        const auto ra = train(a, data, quick(8, 21));
        const auto rb = train(b, data, quick(8, 21));
        CHECK(ra.losses == rb.losses);
        CHECK(same_params(a.params(), b.params()));
        auto c = fresh();
        CHECK(train(c, data, quick(8, 22)).losses != ra.losses);
    }
    SUBCASE("losses stay finite and the smoothed loss falls") {
        auto model = fresh();
        TrainConfig c = quick(400, 5);
        c.batch_size = 4;
        const auto r = train(model, data, c);
        for (double l : r.losses)
            REQUIRE(std::isfinite(l));
        std::vector<double> windows;
        for (std::size_t w = 0; w + 100 <= r.losses.size(); w += 100)
            windows.push_back(testutil::mean({r.losses.begin() + long(w), r.losses.begin() + long(w + 100)}));
        CAPTURE(windows);
        for (std::size_t k = 1; k < windows.size(); ++k)
            CHECK(windows[k] < windows[k - 1]);
    }
    SUBCASE("mode checks") {
        auto model = fresh();
        TrainConfig c = quick(1);
        c.mode = TrainMode::Lora;
        CHECK_THROWS_AS(train(model, data, c), UsageError);
        Rng r(1);
        model.attach_lora({"*.conv1.weight"}, 4, r);
        CHECK_THROWS_AS(train(model, data, quick(1)), UsageError);
        CHECK_THROWS_AS(SyntheticDataset({}, NoiseSource::sampled(), 16), DataError);
    }
}

TEST_CASE("lora fine-tuning") {
    const auto pairs = toy_real_pairs(corpus(), Split::Train, {0.02, 0.005}, 1.0, 4);
    const RealPairDataset data(pairs, 16);
    const auto dir = testutil::scratch_dir("finetune");
    auto base = fresh();
    {
        auto warm = train_set();
        train(base, warm, quick(20));
    }
    save_checkpoint(dir + "/base.rdck", base);
    const auto base_bytes = binio::read_file(dir + "/base.rdck");

    auto model = base;
    TrainConfig c = quick(15, 3);
    c.checkpoint_every = 10;
    const auto result = finetune_lora(model, data, c, 4, default_lora_sites(), {dir + "/ft", {}, {}});

    SUBCASE("base weights are bit-identical afterwards") {
        for (const auto& n : base.params().names())
            CHECK(bit_equal(model.params().get(n), base.params().get(n)));
        CHECK(binio::read_file(dir + "/base.rdck") == base_bytes);
    }
    SUBCASE("adapters moved and reload bit-exactly") {
        REQUIRE(result.checkpoints.size() == 2);
        CHECK(std::filesystem::path(result.checkpoints[0]).filename() == "adapters_step10.rdla");
        CHECK(std::filesystem::path(result.checkpoints[1]).filename() == "adapters.rdla");
        bool moved = false;
        for (const auto& site : model.adapters()->sites)
            for (double v : model.params().get(site.second_name()).values())
                moved = moved || v != 0.0;
        CHECK(moved);
        auto reloaded = load_checkpoint(dir + "/base.rdck");
        load_adapters(result.checkpoints[1], reloaded);
        const auto s = fixed_samples(data, 1, 2)[0];
        const auto x = to_model_domain(s.x0.planes()), y = to_model_domain(s.y.planes());
        CHECK(bit_equal(reloaded.predict_x0(x, y, 5, s.cond), model.predict_x0(x, y, 5, s.cond)));
    }
}

TEST_CASE("held-out objective") {
    const auto data = train_set();
    const auto samples = fixed_samples(data, 6, 8);
    auto model = fresh();
    train(model, data, quick(5));
    const double a = test_l1(model, samples, 77);
    CHECK(a == test_l1(model, samples, 77));
    CHECK(a != test_l1(model, samples, 78));
    // Independent recomputation with the documented per-sample streams.
    const auto sched = cosine_schedule(16);
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Rng r = Rng::derive(77, i);
        const int t = int(r.uniform_int(1, 16));
        Tensor eps(samples[i].x0.planes().shape());
        for (auto& v : eps.values())
            v = r.normal();
        const auto x0 = to_model_domain(samples[i].x0.planes());
        const auto pred = model.predict_x0(q_sample(x0, t, eps, sched), to_model_domain(samples[i].y.planes()), t,
                                           samples[i].cond);
        double l = 0.0;
        for (std::size_t k = 0; k < x0.size(); ++k)
            l += std::abs(pred[k] - x0[k]);
        total += l / double(x0.size());
    }
    CHECK(a == doctest::Approx(total / double(samples.size())).epsilon(1e-13));
    CHECK_THROWS_AS(test_l1(model, {}, 1), UsageError);
}
