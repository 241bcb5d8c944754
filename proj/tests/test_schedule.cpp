#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "decode/rng.hpp"
#include "decode/schedule.hpp"

using namespace decode;

namespace {

// closed-form alpha_bar, evaluated independently of the implementation
double closed_form_abar(int t, int t_diff, double s) {
    auto f = [&](int u) {
        double x = (static_cast<double>(u) / (t_diff + 1) + s) / (1.0 + s);
        double c = std::cos(x * M_PI / 2.0);
        return c * c;
    };
    return f(t) / f(0);
}

}  // namespace

TEST_CASE("cosine schedule matches the closed form at T=500") {
    auto s = make_cosine_schedule(500, 0.008);
    for (int t = 1; t <= 500; ++t) {
        CHECK(s.alpha_bar[t] ==
              doctest::Approx(closed_form_abar(t, 500, 0.008)).epsilon(1e-10));
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);  // strictly decreasing
    }
    CHECK(s.alpha_bar[500] < 1e-3);
    CHECK(s.alpha_bar[1] > 0.99);
    CHECK(s.alpha_bar[0] == 1.0);
}

TEST_CASE("beta stays within (0, 0.999] and never clips for T >= 50") {
    for (int T : {50, 100, 200, 500, 1000}) {
        auto s = make_cosine_schedule(T, 0.008);
        CHECK_FALSE(s.beta_was_clipped);
        for (int t = 1; t <= T; ++t) {
            CHECK(s.beta[t] > 0.0);
            CHECK(s.beta[t] <= 0.999);
        }
    }
}

TEST_CASE("single-step schedule") {
    auto s = make_cosine_schedule(1, 0.008);
    double expect = 1.0 - closed_form_abar(1, 1, 0.008);
    CHECK(s.beta[1] == doctest::Approx(std::min(expect, 0.999)).epsilon(1e-12));
}

TEST_CASE("monotonicity at T=200") {
    auto s = make_cosine_schedule(200, 0.008);
    for (int t = 1; t <= 200; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
}

TEST_CASE("q_sample with zero noise scales x0 exactly") {
    auto s = make_cosine_schedule(100, 0.008);
    Tensor x0({3, 2}, {1, -2, 3, -4, 5, -6});
    Tensor zero(x0.shape, 0.0);
    for (int t : {1, 37, 100}) {
        Tensor xt = q_sample(s, x0, t, zero);
        double a = std::sqrt(s.alpha_bar[t]);
        for (size_t i = 0; i < x0.numel(); ++i)
            CHECK(xt.data[i] == a * x0.data[i]);
    }
}

TEST_CASE("q_sample at the final step is dominated by noise") {
    auto s = make_cosine_schedule(500, 0.008);
    auto rng = make_stream(3, "qs");
    Tensor x0 = Tensor::randn({16, 2}, rng);
    Tensor noise = Tensor::randn({16, 2}, rng);
    Tensor xt = q_sample(s, x0, 500, noise);
    double a = std::sqrt(s.alpha_bar[500]);
    double b = std::sqrt(1.0 - s.alpha_bar[500]);
    for (size_t i = 0; i < x0.numel(); ++i) {
        double bound = a * std::fabs(x0.data[i]) + (1.0 - b) * std::fabs(noise.data[i]) + 1e-12;
        CHECK(std::fabs(xt.data[i] - noise.data[i]) <= bound);
    }
}

TEST_CASE("q_sample empirical variance matches the marginal within 2%") {
    auto s = make_cosine_schedule(100, 0.008);
    const int t = 42, n = 100000;
    const double sigma0 = 1.7;
    auto rng = make_stream(4, "mc");
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor x0({1}, {sigma0 * rng.normal()});
        Tensor eps({1}, {rng.normal()});
        double v = q_sample(s, x0, t, eps).data[0];
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    double expect = s.alpha_bar[t] * sigma0 * sigma0 + (1.0 - s.alpha_bar[t]);
    CHECK(std::fabs(var - expect) / expect < 0.02);
}

TEST_CASE("posterior_step basics") {
    auto s = make_cosine_schedule(20, 0.008);
    auto rng = make_stream(5, "ps");
    Tensor x = Tensor::randn({4, 3}, rng);
    Tensor zero(x.shape, 0.0);

    SUBCASE("final-step coefficients: coef1 = 1, coef2 = 0, noiseless") {
        CHECK(s.posterior_mean_coef1[1] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(s.posterior_mean_coef2[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
        Tensor out = posterior_step(s, x, x, 1, zero);
        for (size_t i = 0; i < x.numel(); ++i)
            CHECK(out.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
    }
    SUBCASE("equal inputs reduce to the coefficient sum plus the noise term") {
        Tensor z = Tensor::randn(x.shape, rng);
        for (int t : {2, 7, 20}) {
            Tensor out = posterior_step(s, x, x, t, z);
            double cs = s.posterior_mean_coef1[t] + s.posterior_mean_coef2[t];
            double sd = std::sqrt(s.posterior_var[t]);
            for (size_t i = 0; i < x.numel(); ++i)
                CHECK(out.data[i] == doctest::Approx(cs * x.data[i] + sd * z.data[i]).epsilon(1e-12));
        }
    }
    SUBCASE("z = 0 is deterministic") {
        Tensor a = posterior_step(s, x, t_scale(x, 0.5), 5, zero);
        Tensor b = posterior_step(s, x, t_scale(x, 0.5), 5, zero);
        CHECK(a.data == b.data);
    }
}

TEST_CASE("telescoping reverse pass with oracle x0 reconstructs x0") {
    auto s = make_cosine_schedule(10, 0.008);
    auto rng = make_stream(6, "tel");
    Tensor x0 = Tensor::randn({8, 2}, rng);
    Tensor zero(x0.shape, 0.0);
    Tensor x = q_sample(s, x0, 10, zero);
    for (int t = 10; t >= 1; --t) x = posterior_step(s, x, x0, t, zero);
    for (size_t i = 0; i < x0.numel(); ++i)
        CHECK(std::fabs(x.data[i] - x0.data[i]) < 1e-6);
}

TEST_CASE("noiseless posterior step equals the previous forward marginal") {
    auto s = make_cosine_schedule(64, 0.008);
    auto rng = make_stream(7, "id");
    Tensor x0 = Tensor::randn({5, 3}, rng);
    Tensor zero(x0.shape, 0.0);
    for (int t = 1; t <= 64; ++t) {
        Tensor xt = q_sample(s, x0, t, zero);
        Tensor stepped = posterior_step(s, xt, x0, t, zero);
        Tensor expect = t > 1 ? q_sample(s, x0, t - 1, zero) : x0;
        for (size_t i = 0; i < x0.numel(); ++i)
            CHECK(std::fabs(stepped.data[i] - expect.data[i]) < 1e-9);
    }
}

TEST_CASE("respacing selects a strictly decreasing alpha_bar subset") {
    auto full = make_cosine_schedule(500, 0.008);
    auto sub = respace(full, 200);
    CHECK(sub.t_diff == 200);
    CHECK(sub.model_t[200] == 500);
    for (int i = 1; i <= 200; ++i) {
        CHECK(sub.alpha_bar[i] ==
              doctest::Approx(full.alpha_bar[sub.model_t[i]]).epsilon(1e-9));
        if (i > 1) CHECK(sub.model_t[i] > sub.model_t[i - 1]);
    }
    auto same = respace(full, 500);
    CHECK(same.alpha_bar == full.alpha_bar);
    CHECK(same.model_t == full.model_t);
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(make_cosine_schedule(0, 0.008), std::invalid_argument);
    CHECK_THROWS_AS(make_cosine_schedule(10, 0.0), std::invalid_argument);
    auto s = make_cosine_schedule(10, 0.008);
    Tensor x({2, 2}, 1.0);
    Tensor zero(x.shape, 0.0);
    CHECK_THROWS_AS(q_sample(s, x, 0, zero), std::invalid_argument);
    CHECK_THROWS_AS(q_sample(s, x, 11, zero), std::invalid_argument);
    CHECK_THROWS_AS(q_sample(s, x, 3, Tensor({3}, 0.0)), std::invalid_argument);
    Tensor z1(x.shape, 0.5);
    CHECK_THROWS_WITH_AS(posterior_step(s, x, x, 1, z1), doctest::Contains("noiseless"),
                         std::invalid_argument);
    CHECK_THROWS_AS(respace(s, 0), std::invalid_argument);
    CHECK_THROWS_AS(respace(s, 11), std::invalid_argument);
}
