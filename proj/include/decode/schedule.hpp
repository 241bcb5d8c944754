#pragma once

#include <vector>

#include "decode/tensor.hpp"

namespace decode {

// Cosine-schedule DDPM coefficients. Arrays are 1-indexed by timestep t in
// [1, t_diff]; alpha_bar[0] == 1 refers to the clean signal. Immutable after
// construction and freely shared.
struct NoiseSchedule {
    int t_diff = 0;
    double cosine_s = 0.0;
    std::vector<double> beta;                 // [0..t_diff], beta[0] unused
    std::vector<double> alpha;                // 1 - beta
    std::vector<double> alpha_bar;            // cumulative product, alpha_bar[0] = 1
    std::vector<double> posterior_mean_coef1; // multiplies x0_hat
    std::vector<double> posterior_mean_coef2; // multiplies x_t
    std::vector<double> posterior_var;        // beta-tilde (lower-bound variance)
    std::vector<int> model_t;                 // timestep fed to the denoiser (respacing)
    bool beta_was_clipped = false;
};

// Cosine noise schedule: alpha_bar_t = f(t)/f(0) with
// f(t) = cos^2(((t/(T+1)) + s)/(1 + s) * pi/2), betas derived and clipped to
// (0, 0.999]. The T+1 denominator keeps the final beta below the clip for
// every T >= 1 while preserving alpha_bar[T] << 1.
NoiseSchedule make_cosine_schedule(int t_diff, double s = 0.008);

// Uniform-stride sub-selection of timesteps for accelerated sampling.
// Returns an n_steps schedule whose alpha_bar values are a subset of the
// source's; model_t maps each derived step to the source timestep.
NoiseSchedule respace(const NoiseSchedule& src, int n_steps);

// Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
Tensor q_sample(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& noise);

// One reverse step given the predicted clean signal:
// coef1[t] x0_hat + coef2[t] x_t + sqrt(posterior_var[t]) z.
// t == 1 requires z == 0 (the final step is noiseless).
Tensor posterior_step(const NoiseSchedule& s, const Tensor& x_t, const Tensor& x0_hat, int t,
                      const Tensor& z);

}  // namespace decode
