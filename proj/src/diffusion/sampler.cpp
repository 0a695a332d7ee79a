#include "diffusion/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace rawdiff {

Tensor to_model_domain(const Tensor& raw) {
    Tensor out(raw.shape());
    for (std::size_t i = 0; i < raw.size(); ++i)
        out[i] = 2.0 * raw[i] - 1.0;
    return out;
}

Tensor from_model_domain(const Tensor& model) {
    Tensor out(model.shape());
    for (std::size_t i = 0; i < model.size(); ++i)
        out[i] = (model[i] + 1.0) / 2.0;
    return out;
}

Tensor posterior_step(const Tensor& x0_hat, const Tensor& x_t, int t, const DiffusionSchedule& sched, Rng& rng) {
    if (x0_hat.shape() != x_t.shape())
        throw UsageError("posterior_step: x0_hat and x_t shapes differ");
    if (t == 1) {
        sched.beta(t);  // range check
        return x0_hat;
    }
    const auto c = posterior_coefficients(sched, t);
    const double sigma = std::sqrt(c.variance);
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = c.x0 * x0_hat[i] + c.xt * x_t[i] + sigma * rng.normal();
    return out;
}

RawImage ddpm_sample(const X0Predictor& model, const RawImage& y, const ConditionVector& cond,
                     const DiffusionSchedule& sched, Rng& rng) {
    const Tensor y_model = to_model_domain(y.planes());
    Tensor x(y_model.shape());
    for (auto& v : x.values())
        v = rng.normal();
    Tensor x0_hat;
    for (int t = sched.steps(); t >= 1; --t) {
        x0_hat = model(x, y_model, sched.model_timestep(t), cond);
        if (x0_hat.shape() != x.shape())
            throw UsageError("ddpm_sample: model returned shape " + shape_string(x0_hat.shape()) + ", expected " +
                             shape_string(x.shape()));
        for (auto& v : x0_hat.values()) {
            if (!std::isfinite(v))
                throw NumericError("ddpm_sample: non-finite model output at t=" + std::to_string(t));
            v = std::clamp(v, -1.0, 1.0);
        }
        if (t > 1)
            x = posterior_step(x0_hat, x, t, sched, rng);
    }
    return RawImage(from_model_domain(x0_hat), y.isp());
}

} // namespace rawdiff
