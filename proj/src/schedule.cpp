#include "decode/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace decode {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kMaxBeta = 0.999;

void fill_posterior(NoiseSchedule& s) {
    const int T = s.t_diff;
    s.posterior_mean_coef1.assign(T + 1, 0.0);
    s.posterior_mean_coef2.assign(T + 1, 0.0);
    s.posterior_var.assign(T + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
        double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[t - 1];
        double denom = 1.0 - ab;
        s.posterior_mean_coef1[t] = s.beta[t] * std::sqrt(ab_prev) / denom;
        s.posterior_mean_coef2[t] = (1.0 - ab_prev) * std::sqrt(s.alpha[t]) / denom;
        s.posterior_var[t] = s.beta[t] * (1.0 - ab_prev) / denom;
    }
}

void check_t(const NoiseSchedule& s, int t, const char* op) {
    if (t < 1 || t > s.t_diff)
        throw std::invalid_argument(std::string(op) + ": timestep " + std::to_string(t) +
                                    " out of range [1, " + std::to_string(s.t_diff) + "]");
}

}  // namespace

NoiseSchedule make_cosine_schedule(int t_diff, double s) {
    if (t_diff < 1) throw std::invalid_argument("make_cosine_schedule: t_diff must be >= 1");
    if (s <= 0.0 || s >= 1.0)
        throw std::invalid_argument("make_cosine_schedule: s must be in (0, 1)");
    NoiseSchedule out;
    out.t_diff = t_diff;
    out.cosine_s = s;
    auto f = [&](int t) {
        double u = (static_cast<double>(t) / (t_diff + 1) + s) / (1.0 + s);
        double c = std::cos(u * kPi / 2.0);
        return c * c;
    };
    const double f0 = f(0);
    out.beta.assign(t_diff + 1, 0.0);
    out.alpha.assign(t_diff + 1, 0.0);
    out.alpha_bar.assign(t_diff + 1, 1.0);
    double prev = 1.0;
    for (int t = 1; t <= t_diff; ++t) {
        double ab = f(t) / f0;
        double beta = 1.0 - ab / prev;
        if (beta > kMaxBeta) {
            beta = kMaxBeta;
            out.beta_was_clipped = true;
        }
        out.beta[t] = beta;
        out.alpha[t] = 1.0 - beta;
        out.alpha_bar[t] = out.alpha_bar[t - 1] * out.alpha[t];
        prev = ab;
    }
    out.model_t.assign(t_diff + 1, 0);
    for (int t = 1; t <= t_diff; ++t) out.model_t[t] = t;
    fill_posterior(out);
    return out;
}

NoiseSchedule respace(const NoiseSchedule& src, int n_steps) {
    if (n_steps < 1 || n_steps > src.t_diff)
        throw std::invalid_argument("respace: n_steps must be in [1, " +
                                    std::to_string(src.t_diff) + "]");
    if (n_steps == src.t_diff) return src;
    NoiseSchedule out;
    out.t_diff = n_steps;
    out.cosine_s = src.cosine_s;
    out.beta.assign(n_steps + 1, 0.0);
    out.alpha.assign(n_steps + 1, 0.0);
    out.alpha_bar.assign(n_steps + 1, 1.0);
    out.model_t.assign(n_steps + 1, 0);
    double prev = 1.0;
    for (int i = 1; i <= n_steps; ++i) {
        int t = static_cast<int>(std::llround(static_cast<double>(i) * src.t_diff / n_steps));
        out.model_t[i] = t;
        double ab = src.alpha_bar[t];
        double beta = 1.0 - ab / prev;
        if (beta > kMaxBeta) {
            beta = kMaxBeta;
            out.beta_was_clipped = true;
        }
        out.beta[i] = beta;
        out.alpha[i] = 1.0 - beta;
        out.alpha_bar[i] = out.alpha_bar[i - 1] * out.alpha[i];
        prev = ab;
    }
    fill_posterior(out);
    return out;
}

Tensor q_sample(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& noise) {
    check_t(s, t, "q_sample");
    if (!x0.same_shape(noise))
        throw std::invalid_argument("q_sample: noise shape " + shape_str(noise.shape) +
                                    " does not match x0 " + shape_str(x0.shape));
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    Tensor out(x0.shape);
    for (size_t i = 0; i < x0.numel(); ++i) out.data[i] = a * x0.data[i] + b * noise.data[i];
    return out;
}

Tensor posterior_step(const NoiseSchedule& s, const Tensor& x_t, const Tensor& x0_hat, int t,
                      const Tensor& z) {
    check_t(s, t, "posterior_step");
    if (!x_t.same_shape(x0_hat) || !x_t.same_shape(z))
        throw std::invalid_argument("posterior_step: shape mismatch " + shape_str(x_t.shape) +
                                    " / " + shape_str(x0_hat.shape) + " / " + shape_str(z.shape));
    if (t == 1 && z.abs_max() != 0.0)
        throw std::invalid_argument("posterior_step: final step (t=1) must be noiseless (z=0)");
    const double c1 = s.posterior_mean_coef1[t];
    const double c2 = s.posterior_mean_coef2[t];
    const double sd = std::sqrt(s.posterior_var[t]);
    Tensor out(x_t.shape);
    for (size_t i = 0; i < x_t.numel(); ++i)
        out.data[i] = c1 * x0_hat.data[i] + c2 * x_t.data[i] + sd * z.data[i];
    return out;
}

}  // namespace decode
