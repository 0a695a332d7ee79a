#pragma once

#include <functional>

#include "common/rng.hpp"
#include "denoiser/condition.hpp"
#include "diffusion/schedule.hpp"
#include "raw/raw_image.hpp"

namespace rawdiff {

/// Raw [0,1] <-> model domain [-1,1].
Tensor to_model_domain(const Tensor& raw);
Tensor from_model_domain(const Tensor& model);

/// Reverse step from x_t given a clean-sample estimate. At t = 1 the
/// estimate is returned unchanged.
Tensor posterior_step(const Tensor& x0_hat, const Tensor& x_t, int t, const DiffusionSchedule& sched, Rng& rng);

/// Predicts x0 in the model domain from (x_t, y, model timestep, condition),
/// with x_t and y in the model domain.
using X0Predictor = std::function<Tensor(const Tensor& x_t, const Tensor& y, int t, const ConditionVector& cond)>;

/// Ancestral sampling from x_T ~ N(0, I) over every step of `sched`
/// (descending), clamping each x0 estimate to [-1, 1]. Returns the final
/// estimate mapped back to [0,1], carrying y's ISP metadata.
RawImage ddpm_sample(const X0Predictor& model, const RawImage& y, const ConditionVector& cond,
                     const DiffusionSchedule& sched, Rng& rng);

} // namespace rawdiff
