#include "decode/sampler.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "decode/rng.hpp"
#include "decode/threading.hpp"

namespace decode {

namespace {

void check_finite(const Tensor& x, int t, const char* where) {
    for (double v : x.data)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("sampling aborted: non-finite state during ") +
                                     where + " at t=" + std::to_string(t));
}

void zero_rows(Tensor& g, size_t row_begin, size_t row_end) {
    const size_t d = g.shape[1];
    std::fill(g.data.begin() + row_begin * d, g.data.begin() + row_end * d, 0.0);
}

}  // namespace

void GuidanceConfig::validate() const {
    if (eta_h < 0 || alpha_w < 0 || gamma_w < 0 || lambda_h < 0 || lambda_t < 0)
        throw std::invalid_argument("guidance: weights must be non-negative");
    if (k_max < 0) throw std::invalid_argument("guidance: k_max must be >= 0");
    if (n_samples < 1) throw std::invalid_argument("guidance: n_samples must be >= 1");
}

void ForecastTask::validate() const {
    if (horizon < 1) throw std::invalid_argument("forecast task: horizon must be >= 1");
    if (history.ndim() != 2)
        throw std::invalid_argument("forecast task: history must be [(T-h) x d]");
    for (double v : history.data)
        if (!std::isfinite(v))
            throw std::invalid_argument("forecast task: history contains non-finite values");
}

DenoiseFn make_denoise_fn(const DenoiserModel& model, const NoiseSchedule& sched) {
    return [&model, &sched](const DiffTensor& x, int t) {
        if (t < 1 || t > sched.t_diff)
            throw std::invalid_argument("denoise_fn: timestep " + std::to_string(t) +
                                        " outside [1, " + std::to_string(sched.t_diff) + "]");
        DenoiserGraph g = bind_denoiser(model, false);
        return denoise_graph(g, model.cfg, x, sched.model_t[t]);
    };
}

Tensor history_gradient(const Tensor& state, int t, const ForecastTask& task,
                        const NoiseSchedule& sched, const DenoiseFn& denoise_fn,
                        const GuidanceConfig& cfg, const FluencyContext* fluency,
                        Tensor* x0_hat_out) {
    if (t < 1 || t > sched.t_diff)
        throw std::invalid_argument("history_gradient: timestep " + std::to_string(t) +
                                    " outside [1, " + std::to_string(sched.t_diff) + "]");
    const size_t obs = task.observed_len();
    Tensor g(state.shape, 0.0);
    if (obs == 0) {
        std::cerr << "warning: history_gradient called with an empty observed region\n";
        return g;
    }
    const bool want_fluency = fluency != nullptr && cfg.gamma_w > 0.0;
    if (cfg.alpha_w > 0.0) {
        GradTape tape;
        TapeScope scope(tape);
        DiffTensor x = make_leaf(state, true);
        DiffTensor x0_hat = denoise_fn(x, t);
        DiffTensor diff = sub(constant(task.history), slice(x0_hat, 0, 0, obs));
        // ascent direction of -alpha * |x_obs - x0_hat_obs|^2
        DiffTensor objective = scale(sum(mul(diff, diff)), -cfg.alpha_w);
        tape.backward(objective);
        if (x.has_grad()) g = x.grad();
        if (x0_hat_out) *x0_hat_out = x0_hat.value();
    } else if (x0_hat_out) {
        *x0_hat_out = denoise_fn(make_leaf(state, false), t).value();
    }
    if (want_fluency) {
        const double scale = cfg.gamma_w / fluency->var;
        for (size_t i = 0; i < g.numel(); ++i)
            g.data[i] -= scale * (state.data[i] - fluency->mean.data[i]);
    }
    return g;
}

Tensor langevin_refine(const Tensor& x_prev, int t, const ForecastTask& task,
                       const NoiseSchedule& sched, const DenoiseFn& denoise_fn,
                       const GuidanceConfig& cfg, const FluencyContext& fluency,
                       int* iterations_out) {
    const int K = cfg.k_max == 0
                      ? 0
                      : static_cast<int>(std::ceil(static_cast<double>(cfg.k_max) * t /
                                                   static_cast<double>(sched.t_diff)));
    if (iterations_out) *iterations_out = K;
    Tensor state = x_prev;
    const int level = std::max(t - 1, 1);  // the proposal lives one step below t
    for (int it = 0; it < K; ++it) {
        Tensor g = history_gradient(state, level, task, sched, denoise_fn, cfg, &fluency);
        for (size_t i = 0; i < state.numel(); ++i) state.data[i] += cfg.eta_h * g.data[i];
        check_finite(state, t, "Langevin refinement");
    }
    return state;
}

Tensor text_gradient(const Tensor& state, int t, size_t target, const Bridge& bridge,
                     const ForecastTask& task, const DenoiseFn& denoise_fn, bool on_denoised) {
    if (target >= bridge.table.n_labels())
        throw std::invalid_argument("text_gradient: event index " + std::to_string(target) +
                                    " out of range [0, " +
                                    std::to_string(bridge.table.n_labels()) + ")");
    const size_t obs = task.observed_len(), h = task.horizon;
    GradTape tape;
    TapeScope scope(tape);
    DiffTensor x = make_leaf(state, true);
    DiffTensor window = on_denoised ? slice(denoise_fn(x, t), 0, obs, h) : slice(x, 0, obs, h);
    BridgeGraph bg = bind_bridge(bridge, false);
    DiffTensor picked = slice(class_log_probs(window, bg), 0, target, 1);
    tape.backward(sum(picked));
    Tensor g = x.has_grad() ? x.grad() : Tensor(state.shape, 0.0);
    zero_rows(g, 0, obs);  // guidance acts on the forecast window only
    return g;
}

ForecastEnsemble sample_forecast(const ForecastTask& task, const DenoiserModel& model,
                                 const NoiseSchedule& sched, const Bridge& bridge,
                                 const GuidanceConfig& cfg) {
    task.validate();
    cfg.validate();
    const size_t obs = task.observed_len(), h = task.horizon, d = task.channels();
    const size_t T = obs + h;
    if (d != model.cfg.channels)
        throw std::invalid_argument("sample_forecast: task has " + std::to_string(d) +
                                    " channels, model expects " +
                                    std::to_string(model.cfg.channels));
    const bool text_on = cfg.lambda_t > 0.0 && cfg.target_event >= 0;
    if (text_on && static_cast<size_t>(cfg.target_event) >= bridge.table.n_labels())
        throw std::invalid_argument("sample_forecast: target event index out of range");
    const bool hist_on = cfg.lambda_h > 0.0;

    DenoiseFn denoise_fn = make_denoise_fn(model, sched);
    const size_t S = static_cast<size_t>(cfg.n_samples);
    ForecastEnsemble out;
    out.samples = Tensor({S, h, d});
    out.windows.assign(S, Tensor());
    out.parts.assign(S, DenoiseParts());

    parallel_for(S, [&](size_t member) {
        auto rng = make_stream(cfg.seed, "member", member);
        Tensor x({T, d});
        for (auto& v : x.data) v = rng.normal();

        for (int t = sched.t_diff; t >= 1; --t) {
            // replacement inpainting: re-noise the observed region
            if (obs > 0) {
                const double a = std::sqrt(sched.alpha_bar[t]);
                const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
                for (size_t r = 0; r < obs; ++r)
                    for (size_t c = 0; c < d; ++c)
                        x.at(r, c) = a * task.history.at(r, c) + b * rng.normal();
            }

            Tensor x0_hat;
            Tensor g_hist;
            if (hist_on) {
                g_hist = history_gradient(x, t, task, sched, denoise_fn, cfg, nullptr, &x0_hat);
            } else {
                DenoiseParts* want_parts = (t == 1) ? &out.parts[member] : nullptr;
                x0_hat = denoise(model, x, sched.model_t[t], want_parts);
            }
            if (hist_on && t == 1) denoise(model, x, sched.model_t[1], &out.parts[member]);

            Tensor g_text;
            if (text_on)
                g_text = text_gradient(x, t, static_cast<size_t>(cfg.target_event), bridge, task,
                                       denoise_fn, cfg.text_on_denoised);

            Tensor mean;
            const bool need_mean = t > 1 && cfg.k_max > 0 && cfg.gamma_w > 0.0;
            if (need_mean) mean = posterior_step(sched, x, x0_hat, t, Tensor(x.shape, 0.0));

            Tensor z(x.shape, 0.0);
            if (t > 1)
                for (auto& v : z.data) v = rng.normal();
            x = posterior_step(sched, x, x0_hat, t, z);
            if (hist_on)
                for (size_t i = 0; i < x.numel(); ++i) x.data[i] += cfg.lambda_h * g_hist.data[i];
            if (text_on)
                for (size_t i = 0; i < x.numel(); ++i) x.data[i] += cfg.lambda_t * g_text.data[i];
            check_finite(x, t, "reverse step");

            if (t > 1 && cfg.k_max > 0) {
                FluencyContext ctx{need_mean ? mean : Tensor(x.shape, 0.0),
                                   sched.posterior_var[t]};
                if (!need_mean) ctx.var = 1.0;  // gamma_w == 0, term inert
                x = langevin_refine(x, t, task, sched, denoise_fn, cfg, ctx);
            }
        }
        // the final window reports observed samples verbatim
        for (size_t r = 0; r < obs; ++r)
            for (size_t c = 0; c < d; ++c) x.at(r, c) = task.history.at(r, c);
        for (size_t r = 0; r < h; ++r)
            for (size_t c = 0; c < d; ++c) out.samples.at(member, r, c) = x.at(obs + r, c);
        out.windows[member] = std::move(x);
    });
    return out;
}

}  // namespace decode
