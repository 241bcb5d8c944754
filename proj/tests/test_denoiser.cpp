#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "decode/denoiser.hpp"
#include "decode/rng.hpp"

using namespace decode;

namespace {

DenoiserConfig small_cfg(size_t d) {
    DenoiserConfig c;
    c.channels = d;
    c.n_enc = 1;
    c.n_dec = 1;
    c.h_dim = 16;
    c.n_heads = 2;
    return c;
}

Tensor randn(std::vector<size_t> s, uint64_t seed) {
    auto rng = make_stream(seed, "dn-test");
    return Tensor::randn(std::move(s), rng);
}

// Gaussian elimination for the small normal-equation solves in trend tests
std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
    const size_t n = b.size();
    for (size_t col = 0; col < n; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (size_t r = col + 1; r < n; ++r) {
            double m = a[r][col] / a[col][col];
            for (size_t c2 = col; c2 < n; ++c2) a[r][c2] -= m * a[col][c2];
            b[r] -= m * b[col];
        }
    }
    std::vector<double> x(n);
    for (size_t i = n; i-- > 0;) {
        double s = b[i];
        for (size_t j = i + 1; j < n; ++j) s -= a[i][j] * x[j];
        x[i] = s / a[i][i];
    }
    return x;
}

}  // namespace

TEST_CASE("zero-initialized output heads give a zero prediction") {
    auto cfg = small_cfg(3);
    cfg.zero_init_heads = true;
    auto m = init_denoiser(cfg, 1);
    DenoiseParts parts;
    Tensor out = denoise(m, randn({32, 3}, 2), 5, &parts);
    for (double v : out.data) CHECK(v == 0.0);
    for (double v : parts.trend.data) CHECK(v == 0.0);
    for (auto& s : parts.seasonal)
        for (double v : s.data) CHECK(v == 0.0);
    for (double v : parts.residual.data) CHECK(v == 0.0);
}

TEST_CASE("decomposition sums exactly to the prediction") {
    auto cfg = small_cfg(4);
    cfg.n_dec = 2;
    auto m = init_denoiser(cfg, 3);
    DenoiseParts parts;
    Tensor out = denoise(m, randn({40, 4}, 4), 9, &parts);
    Tensor acc = parts.trend;
    for (auto& s : parts.seasonal) acc = t_add(acc, s);
    acc = t_add(acc, parts.residual);
    CHECK(acc.data == out.data);  // bitwise
    CHECK(parts.seasonal.size() == 2);
    for (double v : out.data) CHECK(std::isfinite(v));
}

TEST_CASE("trend_synthesis") {
    SUBCASE("constant coefficient gives a constant trend") {
        auto tr = trend_synthesis(constant(Tensor({4, 1}, {2.5, 0, 0, 0})), 7);
        for (double v : tr.value().data) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));
    }
    SUBCASE("linear ramp") {
        auto tr = trend_synthesis(constant(Tensor({4, 1}, {0, 1, 0, 0})), 5);
        std::vector<double> expect = {0.0, 0.2, 0.4, 0.6, 0.8};
        for (size_t i = 0; i < 5; ++i)
            CHECK(tr.value().data[i] == doctest::Approx(expect[i]).epsilon(1e-15));
    }
    SUBCASE("least-squares fit through the basis recovers cubic coefficients") {
        const size_t T = 50;
        std::vector<double> c_true = {0.3, -1.2, 0.8, 2.1};
        auto y = trend_synthesis(constant(Tensor({4, 1}, c_true)), T).value();
        // columns of the basis via unit coefficient vectors
        std::vector<std::vector<double>> cols(4);
        for (size_t j = 0; j < 4; ++j) {
            Tensor e({4, 1}, 0.0);
            e.data[j] = 1.0;
            cols[j] = trend_synthesis(constant(e), T).value().data;
        }
        std::vector<std::vector<double>> ata(4, std::vector<double>(4, 0.0));
        std::vector<double> aty(4, 0.0);
        for (size_t i = 0; i < 4; ++i) {
            for (size_t j = 0; j < 4; ++j)
                for (size_t n = 0; n < T; ++n) ata[i][j] += cols[i][n] * cols[j][n];
            for (size_t n = 0; n < T; ++n) aty[i] += cols[i][n] * y.data[n];
        }
        auto c_fit = solve_dense(ata, aty);
        for (size_t j = 0; j < 4; ++j)
            CHECK(std::fabs(c_fit[j] - c_true[j]) < 1e-8);
    }
}

TEST_CASE("fourier_synthesis") {
    const size_t T = 32;
    auto tone = [&](double amp, double bin, double phase) {
        Tensor x({T, 1});
        for (size_t n = 0; n < T; ++n)
            x.data[n] = amp * std::cos(2.0 * M_PI * bin * n / T + phase);
        return x;
    };
    SUBCASE("a pure tone passes through with k=1") {
        Tensor x = tone(1.0, 3, 0.4);
        auto y = fourier_synthesis(constant(x), 1);
        for (size_t n = 0; n < T; ++n)
            CHECK(std::fabs(y.value().data[n] - x.data[n]) < 1e-6);
    }
    SUBCASE("only the dominant of two tones survives k=1") {
        Tensor two = t_add(tone(3.0, 2, 0.0), tone(1.0, 5, 0.7));
        Tensor dominant = tone(3.0, 2, 0.0);
        auto y = fourier_synthesis(constant(two), 1);
        for (size_t n = 0; n < T; ++n)
            CHECK(std::fabs(y.value().data[n] - dominant.data[n]) < 1e-6);
    }
    SUBCASE("keeping every bin is the identity") {
        Tensor x = randn({T, 2}, 5);
        auto y = fourier_synthesis(constant(x), T / 2);
        for (size_t i = 0; i < x.numel(); ++i)
            CHECK(std::fabs(y.value().data[i] - x.data[i]) < 1e-9);
    }
    SUBCASE("k out of range") {
        CHECK_THROWS_AS(fourier_synthesis(constant(Tensor({16, 1}, 1.0)), 9),
                        std::invalid_argument);
        CHECK_THROWS_AS(fourier_synthesis(constant(Tensor({16, 1}, 1.0)), 0),
                        std::invalid_argument);
    }
}

TEST_CASE("ada_layer_norm") {
    const size_t h = 8;
    AdaLNT<DiffTensor> zero_p{{constant(Tensor::zeros({h, h})), constant(Tensor::zeros({h}))},
                              {constant(Tensor::zeros({h, h})), constant(Tensor::zeros({h}))}};
    auto t_emb = constant(randn({1, h}, 6));

    SUBCASE("zero projections reduce to plain layer norm") {
        Tensor x = randn({5, h}, 7);
        auto y = ada_layer_norm(constant(x), t_emb, zero_p).value();
        for (size_t r = 0; r < 5; ++r) {
            double mu = 0, var = 0;
            for (size_t j = 0; j < h; ++j) mu += y.at(r, j);
            mu /= h;
            for (size_t j = 0; j < h; ++j) var += (y.at(r, j) - mu) * (y.at(r, j) - mu);
            var /= h;
            CHECK(std::fabs(mu) < 1e-6);
            CHECK(std::fabs(var - 1.0) < 1e-4);
        }
    }
    SUBCASE("constant-feature token collapses to the shift") {
        AdaLNT<DiffTensor> p = zero_p;
        Tensor shift_w = randn({h, h}, 8);
        p.shift.w = constant(shift_w);
        Tensor x({2, h}, 3.7);  // degenerate variance
        auto y = ada_layer_norm(constant(x), t_emb, p).value();
        Tensor expect = t_matmul(t_emb.value(), shift_w);
        for (size_t r = 0; r < 2; ++r)
            for (size_t j = 0; j < h; ++j)
                CHECK(y.at(r, j) == doctest::Approx(expect.data[j]).epsilon(1e-9));
    }
}

TEST_CASE("distinct timesteps change the output at random init") {
    auto cfg = small_cfg(2);
    auto m = init_denoiser(cfg, 9);
    Tensor x = randn({24, 2}, 10);
    Tensor a = denoise(m, x, 1);
    Tensor b = denoise(m, x, 100);
    double diff = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::fabs(a.data[i] - b.data[i]));
    CHECK(diff > 1e-8);
}

TEST_CASE("timestep embeddings are distinct across t") {
    Tensor prev;
    for (int t : {1, 2, 3, 100, 499, 500}) {
        Tensor f = sinusoidal_features(t, 16);
        if (!prev.data.empty()) {
            double diff = 0.0;
            for (size_t i = 0; i < f.numel(); ++i)
                diff = std::max(diff, std::fabs(f.data[i] - prev.data[i]));
            CHECK(diff > 1e-6);
        }
        prev = f;
    }
}

TEST_CASE("shape preservation across window lengths and channel counts") {
    for (size_t T : {8, 64, 256, 1075}) {
        for (size_t d : {1, 4, 14, 59}) {
            if (T == 1075 && d > 14) continue;  // covered below at full width
            auto m = init_denoiser(small_cfg(d), 11);
            Tensor out = denoise(m, randn({T, d}, 12), 3);
            CHECK(out.shape == std::vector<size_t>{T, d});
        }
    }
    auto m = init_denoiser(small_cfg(59), 11);
    Tensor out = denoise(m, randn({1075, 59}, 13), 3);
    CHECK(out.shape == std::vector<size_t>{1075, 59});
}

TEST_CASE("determinism and batch-order independence") {
    auto m = init_denoiser(small_cfg(3), 14);
    Tensor x1 = randn({20, 3}, 15), x2 = randn({20, 3}, 16);
    Tensor a1 = denoise(m, x1, 4), a2 = denoise(m, x2, 4);
    // reversed processing order leaves each result unchanged
    Tensor b2 = denoise(m, x2, 4), b1 = denoise(m, x1, 4);
    CHECK(a1.data == b1.data);
    CHECK(a2.data == b2.data);
}

TEST_CASE("gradient flows into every parameter group after one loss") {
    auto cfg = small_cfg(2);
    cfg.n_enc = 2;
    cfg.n_dec = 2;
    auto m = init_denoiser(cfg, 17);
    GradTape tape;
    TapeScope scope(tape);
    auto g = bind_denoiser(m, true);
    auto x = make_leaf(randn({16, 2}, 18), false);
    auto target = make_leaf(randn({16, 2}, 19), false);
    auto loss = mean(abs(sub(denoise_graph(g, cfg, x, 7), target)));
    tape.backward(loss);
    std::vector<double> grad_norms;
    std::function<void(DiffTensor&)> push = [&](DiffTensor& t) {
        REQUIRE(t.has_grad());
        grad_norms.push_back(t_l2norm(t.grad()));
    };
    push(g.input_proj.w);
    push(g.input_proj.b);
    push(g.t_mlp1.w);
    push(g.t_mlp2.w);
    for (auto& b : g.enc) {
        push(b.ln1.scale.w);
        push(b.ln1.shift.b);
        push(b.attn.q.w);
        push(b.attn.k.w);
        push(b.attn.v.w);
        push(b.attn.o.w);
        push(b.ff1.w);
        push(b.ff2.w);
    }
    for (auto& b : g.dec) {
        push(b.self_attn.q.w);
        push(b.cross_attn.q.w);
        push(b.cross_attn.k.w);
        push(b.ff1.w);
        push(b.trend_head.w);
        push(b.season_proj.w);
    }
    push(g.residual_head.w);
    for (double n : grad_norms) CHECK(n > 0.0);
}

TEST_CASE("channel mismatch raises") {
    auto m = init_denoiser(small_cfg(3), 20);
    CHECK_THROWS_WITH_AS(denoise(m, Tensor({16, 2}, 0.0), 1), doctest::Contains("channels"),
                         std::invalid_argument);
}
