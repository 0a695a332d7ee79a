#include "diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "common/error.hpp"

namespace rawdiff {

std::size_t DiffusionSchedule::index(int t) const {
    if (t < 1 || t > steps())
        throw UsageError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    return static_cast<std::size_t>(t - 1);
}

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas, std::vector<int> model_timesteps) {
    if (betas.empty())
        throw UsageError("schedule needs at least one step");
    DiffusionSchedule s;
    s.beta_ = std::move(betas);
    const std::size_t T = s.beta_.size();
    if (model_timesteps.empty()) {
        model_timesteps.resize(T);
        for (std::size_t i = 0; i < T; ++i)
            model_timesteps[i] = static_cast<int>(i + 1);
    }
    if (model_timesteps.size() != T)
        throw UsageError("schedule: model timestep table length mismatch");
    s.model_t_ = std::move(model_timesteps);
    s.alpha_.resize(T);
    s.alpha_bar_.resize(T);
    s.posterior_var_.resize(T);
    double prod = 1.0;
    for (std::size_t i = 0; i < T; ++i) {
        const double b = s.beta_[i];
        if (!(b > 0.0 && b < 1.0))
            throw UsageError("schedule: beta(" + std::to_string(i + 1) + ") = " + std::to_string(b) + " not in (0,1)");
        const double prev = prod;
        s.alpha_[i] = 1.0 - b;
        prod *= s.alpha_[i];
        s.alpha_bar_[i] = prod;
        s.posterior_var_[i] = i == 0 ? 0.0 : (1.0 - prev) / (1.0 - prod) * b;
    }
    return s;
}

DiffusionSchedule cosine_schedule(int T, double s) {
    if (T < 2)
        throw UsageError("cosine schedule needs T >= 2, got " + std::to_string(T));
    auto f = [&](double t) {
        const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    const double f0 = f(0.0);
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        const double ab = f(t) / f0;
        const double ab_prev = f(t - 1) / f0;
        betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - ab / ab_prev, kMaxBeta);
    }
    return DiffusionSchedule::from_betas(std::move(betas));
}

DiffusionSchedule respace(const DiffusionSchedule& parent, int steps) {
    const int T = parent.steps();
    if (steps < 1 || steps > T)
        throw UsageError("respace: steps must be in [1, " + std::to_string(T) + "], got " + std::to_string(steps));
    if (steps == T)
        return parent;
    std::vector<int> ts(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        ts[static_cast<std::size_t>(i)] =
            steps == 1 ? T : 1 + static_cast<int>(std::lround(static_cast<double>(i) * (T - 1) / (steps - 1)));
    std::vector<double> betas(ts.size());
    double prev = 1.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double ab = parent.alpha_bar(ts[i]);
        betas[i] = std::min(1.0 - ab / prev, kMaxBeta);
        prev = ab;
    }
    return DiffusionSchedule::from_betas(std::move(betas), std::move(ts));
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const DiffusionSchedule& sched) {
    if (x0.shape() != eps.shape())
        throw UsageError("q_sample: eps shape " + shape_string(eps.shape()) + " differs from x0 " +
                         shape_string(x0.shape()));
    const double a = std::sqrt(sched.alpha_bar(t));
    const double b = std::sqrt(1.0 - sched.alpha_bar(t));
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i)
        out[i] = a * x0[i] + b * eps[i];
    return out;
}

Tensor forward_step(const Tensor& x_prev, int t, const Tensor& eps, const DiffusionSchedule& sched) {
    if (x_prev.shape() != eps.shape())
        throw UsageError("forward_step: eps shape mismatch");
    const double a = std::sqrt(1.0 - sched.beta(t));
    const double b = std::sqrt(sched.beta(t));
    Tensor out(x_prev.shape());
    for (std::size_t i = 0; i < x_prev.size(); ++i)
        out[i] = a * x_prev[i] + b * eps[i];
    return out;
}

PosteriorCoefficients posterior_coefficients(const DiffusionSchedule& sched, int t) {
    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar_prev(t);
    const double beta = sched.beta(t);
    return {std::sqrt(ab_prev) * beta / (1.0 - ab), std::sqrt(sched.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab),
            sched.posterior_variance(t)};
}

} // namespace rawdiff
