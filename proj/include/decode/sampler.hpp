#pragma once

#include <functional>
#include <string>
#include <vector>

#include "decode/bridge.hpp"
#include "decode/denoiser.hpp"
#include "decode/schedule.hpp"
#include "decode/tensor.hpp"

namespace decode {

struct GuidanceConfig {
    double eta_h = 0.05;    // Langevin step size
    double alpha_w = 1.0;   // reconstruction-fidelity weight
    double gamma_w = 0.1;   // fluency weight
    double lambda_h = 1.0;  // history-guidance weight
    double lambda_t = 0.3;  // text-guidance weight
    int k_max = 5;          // Langevin iteration cap, scheduled as ceil(k_max * t / T)
    int target_event = -1;  // label index k; < 0 disables text guidance
    int n_samples = 1;
    uint64_t seed = 0;
    // evaluate the classifier on the one-step denoised horizon (default) or
    // directly on the noisy state
    bool text_on_denoised = true;

    void validate() const;
};

struct ForecastTask {
    Tensor history;  // [(T-h) x d] observed signal
    size_t horizon = 0;
    int event = -1;  // label index, metadata
    std::vector<std::string> channel_names;

    size_t observed_len() const { return history.shape.empty() ? 0 : history.shape[0]; }
    size_t channels() const { return history.shape.size() == 2 ? history.shape[1] : 0; }
    size_t window_len() const { return observed_len() + horizon; }
    void validate() const;
};

// Denoiser hook: x at a (derived-)schedule timestep t -> predicted clean
// signal. Runs under the caller's tape so gradients flow to x.
using DenoiseFn = std::function<DiffTensor(const DiffTensor& x, int t)>;

DenoiseFn make_denoise_fn(const DenoiserModel& model, const NoiseSchedule& sched);

// Gaussian posterior log-density context for the fluency term.
struct FluencyContext {
    Tensor mean;  // mu_theta(x_t, t), frozen during refinement
    double var;   // posterior variance at the step being refined
};

// Gradient of the history-consistency surrogate at `state` (noise level t):
//   alpha_w * d/dx [ -|x_obs - x0_hat(x)_obs|^2 ]  +  gamma_w * d/dx log p(x | ctx)
// Ascending this decreases the reconstruction error and pulls toward the
// posterior mean. x0_hat_out receives the internal denoiser prediction.
Tensor history_gradient(const Tensor& state, int t, const ForecastTask& task,
                        const NoiseSchedule& sched, const DenoiseFn& denoise_fn,
                        const GuidanceConfig& cfg, const FluencyContext* fluency = nullptr,
                        Tensor* x0_hat_out = nullptr);

// K(t) = ceil(k_max * t / T) ascent steps of size eta_h on the proposal
// x_{t-1}; the reconstruction term re-evaluates the denoiser at the
// proposal's level, the fluency term pulls toward `mean`.
Tensor langevin_refine(const Tensor& x_prev, int t, const ForecastTask& task,
                       const NoiseSchedule& sched, const DenoiseFn& denoise_fn,
                       const GuidanceConfig& cfg, const FluencyContext& fluency,
                       int* iterations_out = nullptr);

// Gradient of class_log_probs(horizon window)[k] w.r.t. the state, zero
// outside the forecast window.
Tensor text_gradient(const Tensor& state, int t, size_t target, const Bridge& bridge,
                     const ForecastTask& task, const DenoiseFn& denoise_fn,
                     bool on_denoised = true);

struct ForecastEnsemble {
    Tensor samples;                  // [S x h x d]
    std::vector<Tensor> windows;     // per sample: final full window, observed
                                     // region reported verbatim from history
    std::vector<DenoiseParts> parts; // per sample: decomposition at t = 1
};

// Reverse diffusion with replacement inpainting of the observed region plus
// dual guidance per step:
//   x_{t-1} = posterior_step(...) + lambda_h g_history + lambda_t g_text,
// followed by Langevin refinement. Deterministic given cfg.seed; ensemble
// members run on independent RNG streams.
ForecastEnsemble sample_forecast(const ForecastTask& task, const DenoiserModel& model,
                                 const NoiseSchedule& sched, const Bridge& bridge,
                                 const GuidanceConfig& cfg);

}  // namespace decode
