#pragma once

#include <vector>

#include "tensor/tensor.hpp"

namespace rawdiff {

/// Fixed variance schedule. Steps are 1-based: beta(1) .. beta(steps()).
/// `model_timestep(t)` is the training-time step the network sees, which
/// differs from t only on a respaced schedule.
class DiffusionSchedule {
public:
    int steps() const { return static_cast<int>(beta_.size()); }

    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
    /// alpha_bar(0) == 1.
    double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar(t - 1); }
    /// (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t); zero at t = 1.
    double posterior_variance(int t) const { return posterior_var_.at(index(t)); }
    int model_timestep(int t) const { return model_t_.at(index(t)); }

    /// Builds a schedule from per-step betas; alpha_bar is their running product.
    static DiffusionSchedule from_betas(std::vector<double> betas, std::vector<int> model_timesteps = {});

private:
    std::size_t index(int t) const;

    std::vector<double> beta_, alpha_, alpha_bar_, posterior_var_;
    std::vector<int> model_t_;
};

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

/// alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2); betas are
/// 1 - alpha_bar(t)/alpha_bar(t-1) clamped to 0.999.
DiffusionSchedule cosine_schedule(int T, double s = kCosineOffset);

/// Strided subsequence of `steps` timesteps (always including 1 and T) with
/// betas recomputed so the cumulative products match the parent schedule.
DiffusionSchedule respace(const DiffusionSchedule& parent, int steps);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const DiffusionSchedule& sched);

/// One forward Markov step: x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps
Tensor forward_step(const Tensor& x_prev, int t, const Tensor& eps, const DiffusionSchedule& sched);

struct PosteriorCoefficients {
    double x0 = 0.0;  // weight on the predicted clean sample
    double xt = 0.0;  // weight on the current sample
    double variance = 0.0;
};

PosteriorCoefficients posterior_coefficients(const DiffusionSchedule& sched, int t);

} // namespace rawdiff
