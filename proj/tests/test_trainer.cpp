#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "decode/checkpoint.hpp"
#include "decode/rng.hpp"
#include "decode/trainer.hpp"

using namespace decode;

namespace {

// small labeled sine dataset: per event a distinct frequency plus noise
TrialSet sine_trials(size_t n_per_event, size_t T, size_t d, double rate, uint64_t seed) {
    TrialSet ts;
    const std::vector<std::string> events = {"event_a", "event_b"};
    const size_t N = n_per_event * events.size();
    ts.data = Tensor({N, T, d});
    ts.rate_hz = rate;
    for (size_t c = 0; c < d; ++c) ts.channel_names.push_back("ch" + std::to_string(c));
    size_t i = 0;
    for (size_t ev = 0; ev < events.size(); ++ev)
        for (size_t k = 0; k < n_per_event; ++k, ++i) {
            auto rng = make_stream(seed, "sine-trial", i);
            double freq = ev == 0 ? 4.0 : 9.0;
            double phase = rng.uniform(0, 2 * M_PI);
            for (size_t t = 0; t < T; ++t)
                for (size_t c = 0; c < d; ++c)
                    ts.data.at(i, t, c) =
                        3.0 * std::sin(2 * M_PI * freq * t / rate + phase + 0.3 * c) +
                        0.3 * rng.normal();
            ts.labels.push_back(events[ev]);
            ts.marker.push_back(T / 2);
        }
    return ts;
}

EmbeddingTable small_table(size_t K, uint64_t seed) {
    std::vector<std::string> labels = {"event_a", "event_b", "event_c"};
    labels.resize(K);
    auto rng = make_stream(seed, "emb");
    return make_embedding_table(labels, Tensor::randn({K, 24}, rng), 16, seed);
}

TrainerState desk_trainer(const TrialSet& data, TrainConfig cfg, uint64_t seed = 5) {
    DenoiserConfig mc;
    mc.n_enc = 1;
    mc.n_dec = 1;
    mc.h_dim = 16;
    mc.n_heads = 2;
    SignalEncoderConfig ec;
    ec.width1 = 8;
    ec.width2 = 12;
    return make_trainer(data, small_table(2, seed), mc, ec, cfg);
}

struct TempPath {
    std::string path;
    explicit TempPath(std::string p) : path(std::move(p)) {}
    ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("sliding_windows") {
    SUBCASE("stride arithmetic with marker containment") {
        TrialSet ts;
        ts.data = Tensor({1, 1203, 1});
        ts.labels = {"e"};
        ts.marker = {500};
        ts.rate_hz = 1000;
        auto w = sliding_windows(ts, 1075, 64);
        // floor((1203-1075)/64)+1 starts, all containing index 500
        CHECK(w.size() == 3);
        for (auto& win : w) {
            CHECK(win.start <= 500);
            CHECK(500 < win.start + 1075);
        }
    }
    SUBCASE("stride equal to trial length yields at most one window") {
        TrialSet ts;
        ts.data = Tensor({1, 300, 1});
        ts.labels = {"e"};
        ts.marker = {150};
        ts.rate_hz = 100;
        CHECK(sliding_windows(ts, 300, 300).size() == 1);
    }
    SUBCASE("marker at index 0 keeps only windows starting at 0") {
        TrialSet ts;
        ts.data = Tensor({1, 300, 1});
        ts.labels = {"e"};
        ts.marker = {0};
        ts.rate_hz = 100;
        auto w = sliding_windows(ts, 100, 64);
        CHECK(w.size() == 1);
        CHECK(w[0].start == 0);
    }
    SUBCASE("window longer than the trial raises") {
        TrialSet ts;
        ts.data = Tensor({1, 64, 1});
        ts.labels = {"e"};
        ts.marker = {10};
        ts.rate_hz = 100;
        CHECK_THROWS_AS(sliding_windows(ts, 65, 8), std::invalid_argument);
    }
    SUBCASE("window count is non-increasing in stride") {
        auto ts = sine_trials(3, 256, 2, 128, 1);
        size_t prev = SIZE_MAX;
        for (size_t stride : {8, 16, 32, 64, 128, 256}) {
            size_t n = sliding_windows(ts, 128, stride).size();
            CHECK(n <= prev);
            prev = n;
        }
    }
}

TEST_CASE("normalization round-trips") {
    auto ts = sine_trials(2, 64, 3, 64, 2);
    auto stats = compute_channel_stats(ts);
    Tensor w = ts.trial(1);
    Tensor back = denormalize(normalize(w, stats), stats);
    for (size_t i = 0; i < w.numel(); ++i) CHECK(std::fabs(back.data[i] - w.data[i]) < 1e-9);
    Tensor n = normalize(w, stats);
    CHECK(std::fabs(t_sum(n)) < w.numel());  // roughly centered
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    Tensor p({3}, {1.0, -2.0, 3.0});
    std::vector<Tensor*> params = {&p};
    std::vector<Tensor> grads = {Tensor::zeros({3})};
    std::vector<Tensor> m = {Tensor::zeros({3})}, v = {Tensor::zeros({3})};
    adam_update(params, grads, m, v, 1, 0.1);
    CHECK(p.data == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("EMA update: one step from 0 toward 1 moves by 1 - decay") {
    auto ts = sine_trials(2, 64, 2, 64, 3);
    TrainConfig cfg;
    cfg.window = 64;
    cfg.stride = 64;
    cfg.batch_size = 2;
    cfg.epochs = 1;
    cfg.t_diff = 10;
    cfg.lr = 1e-3;
    cfg.ema_decay = 0.995;
    auto st = desk_trainer(ts, cfg);
    // force a known (param, ema) pair, then run one step
    st.model.params.input_proj.b.data[0] = 1.0;
    st.ema.input_proj.b.data[0] = 0.0;
    // zero out influence of the optimizer on this coordinate by checking the
    // EMA identity directly on the post-step weight
    auto windows = sliding_windows(ts, 64, 64);
    train_step(st, ts, {windows[0], windows[1]}, 0, 0);
    double w_after = st.model.params.input_proj.b.data[0];
    CHECK(st.ema.input_proj.b.data[0] == doctest::Approx(0.005 * w_after).epsilon(1e-9));
}

TEST_CASE("w_contrast = 0 trains the pure diffusion loss; zero data + zero heads = zero loss") {
    TrialSet ts;
    ts.data = Tensor({2, 64, 2});  // all zeros
    ts.labels = {"event_a", "event_b"};
    ts.marker = {32, 32};
    ts.rate_hz = 64;
    TrainConfig cfg;
    cfg.window = 64;
    cfg.stride = 64;
    cfg.batch_size = 2;
    cfg.t_diff = 10;
    cfg.w_contrast = 0.0;
    DenoiserConfig mc;
    mc.n_enc = 1;
    mc.n_dec = 1;
    mc.h_dim = 16;
    mc.n_heads = 2;
    mc.zero_init_heads = true;
    SignalEncoderConfig ec;
    ec.width1 = 8;
    ec.width2 = 12;
    auto st = make_trainer(ts, small_table(2, 7), mc, ec, cfg);
    auto windows = sliding_windows(ts, 64, 64);
    auto rec = train_step(st, ts, windows, 0, 0);
    CHECK(rec.total == 0.0);
    CHECK(rec.contrast == 0.0);
}

TEST_CASE("smoke training halves the L1 loss on a sine dataset") {
    auto ts = sine_trials(8, 64, 2, 64, 4);
    TrainConfig cfg;
    cfg.window = 64;
    cfg.stride = 64;
    cfg.batch_size = 8;
    cfg.epochs = 100;
    cfg.t_diff = 50;
    cfg.lr = 2e-3;
    cfg.w_contrast = 0.1;
    cfg.seed = 11;
    cfg.checkpoint_interval = 0;
    auto st = desk_trainer(ts, cfg, 11);
    std::vector<LossRecord> log;
    train_epochs(st, ts, cfg.epochs, &log);
    REQUIRE(log.size() >= 100);
    double first = log.front().l1;
    double tail = 0.0;
    size_t n_tail = 10;
    for (size_t i = log.size() - n_tail; i < log.size(); ++i) tail += log[i].l1;
    tail /= n_tail;
    INFO("first=", first, " tail=", tail);
    CHECK(tail <= 0.5 * first);
}

TEST_CASE("checkpoint round-trip and resume determinism") {
    auto ts = sine_trials(4, 64, 2, 64, 6);
    TrainConfig cfg;
    cfg.window = 64;
    cfg.stride = 64;
    cfg.batch_size = 4;
    cfg.epochs = 6;
    cfg.t_diff = 20;
    cfg.lr = 1e-3;
    cfg.seed = 13;
    cfg.checkpoint_interval = 0;

    SUBCASE("save -> load -> save produces identical bytes") {
        auto st = desk_trainer(ts, cfg, 13);
        std::vector<LossRecord> log;
        train_epochs(st, ts, 2, &log);
        TempPath a("tmp_ck_a.dckp"), b("tmp_ck_b.dckp");
        save_checkpoint(st, a.path);
        auto st2 = load_checkpoint(a.path);
        save_checkpoint(st2, b.path);
        std::ifstream fa(a.path, std::ios::binary), fb(b.path, std::ios::binary);
        std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        CHECK(ba == bb);
        CHECK(ba.size() > 0);
    }
    SUBCASE("resumed training reproduces the uninterrupted loss sequence") {
        std::vector<LossRecord> full_log;
        {
            auto st = desk_trainer(ts, cfg, 13);
            train_epochs(st, ts, 6, &full_log);
        }
        std::vector<LossRecord> split_log;
        TempPath ck("tmp_ck_resume.dckp");
        {
            auto st = desk_trainer(ts, cfg, 13);
            train_epochs(st, ts, 3, &split_log);
            save_checkpoint(st, ck.path);
        }
        {
            auto st = load_checkpoint(ck.path);
            train_epochs(st, ts, 3, &split_log);
        }
        REQUIRE(full_log.size() == split_log.size());
        for (size_t i = 0; i < full_log.size(); ++i) {
            CHECK(full_log[i].total == split_log[i].total);  // bit-exact
            CHECK(full_log[i].l1 == split_log[i].l1);
        }
    }
    SUBCASE("wrong magic bytes raise 'not a checkpoint'") {
        TempPath bad("tmp_ck_bad.dckp");
        std::ofstream f(bad.path, std::ios::binary);
        f << "NOPExxxxxxxxxxxxxxxx";
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(bad.path), doctest::Contains("not a checkpoint"),
                             std::runtime_error);
    }
    SUBCASE("truncated file raises") {
        auto st = desk_trainer(ts, cfg, 13);
        TempPath ck("tmp_ck_trunc.dckp");
        save_checkpoint(st, ck.path);
        std::ifstream f(ck.path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        f.close();
        std::ofstream out(ck.path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(ck.path), doctest::Contains("truncated"),
                             std::runtime_error);
    }
}
