#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "decode/bridge.hpp"
#include "decode/rng.hpp"

using namespace decode;

namespace {

Tensor randn(std::vector<size_t> s, uint64_t seed) {
    auto rng = make_stream(seed, "br-test");
    return Tensor::randn(std::move(s), rng);
}

struct TempJson {
    std::string path;
    explicit TempJson(const std::string& name, const std::string& content)
        : path("tmp_" + name + ".json") {
        std::ofstream f(path);
        f << content;
    }
    ~TempJson() { std::remove(path.c_str()); }
};

Bridge make_test_bridge(size_t channels, size_t K, size_t d_raw, size_t d_emb, uint64_t seed) {
    std::vector<std::string> labels;
    for (size_t k = 0; k < K; ++k) labels.push_back("event_" + std::to_string(k));
    Bridge b;
    b.table = make_embedding_table(labels, randn({K, d_raw}, seed), d_emb, seed);
    SignalEncoderConfig cfg;
    cfg.channels = channels;
    cfg.d_emb = d_emb;
    cfg.width1 = 8;
    cfg.width2 = 12;
    b.encoder = init_signal_encoder(cfg, seed + 1);
    return b;
}

}  // namespace

TEST_CASE("import: shipped fixture has five 1024-dim driving events") {
    auto t = import_embeddings(std::string(DECODE_REPO_DIR) + "/assets/embeddings_driving5.json");
    CHECK(t.n_labels() == 5);
    CHECK(t.d_raw() == 1024);
    CHECK(t.label_index("braking") == 0);
    CHECK(t.label_index("stable_driving") == 4);
    CHECK(t.label_index("parking") == -1);
    CHECK_FALSE(t.collision_warning);
    CHECK(t.tau() == doctest::Approx(0.07));
}

TEST_CASE("import: single label is valid and InfoNCE degenerates to zero") {
    TempJson f("single", R"({"only": [0.5, -0.25, 1.0]})");
    auto t = import_embeddings(f.path, 4, 7);
    CHECK(t.n_labels() == 1);
    auto e = constant(randn({3, 4}, 1));
    auto loss = info_nce(e, constant(randn({1, 4}, 2)), {0, 0, 0}, constant(t.log_tau));
    CHECK(loss.value().data[0] == 0.0);
}

TEST_CASE("import: identical vectors under different labels warn") {
    TempJson f("collide", R"({"a": [1, 2, 3], "b": [2, 4, 6], "c": [0, 1, 0]})");
    auto t = import_embeddings(f.path, 4, 7);
    CHECK(t.n_labels() == 3);
    CHECK(t.collision_warning);  // a and b are colinear
}

TEST_CASE("import: malformed files raise") {
    SUBCASE("empty object") {
        TempJson f("empty", "{}");
        CHECK_THROWS_AS(import_embeddings(f.path), std::runtime_error);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(import_embeddings("no_such_file.json"), std::runtime_error); }
    SUBCASE("dimension mismatch") {
        TempJson f("dims", R"({"a": [1, 2, 3], "b": [1, 2]})");
        CHECK_THROWS_WITH_AS(import_embeddings(f.path), doctest::Contains("dimension"),
                             std::runtime_error);
    }
    SUBCASE("duplicate label") {
        TempJson f("dup", R"({"a": [1, 2], "a": [3, 4]})");
        CHECK_THROWS_WITH_AS(import_embeddings(f.path), doctest::Contains("duplicate"),
                             std::runtime_error);
    }
    SUBCASE("non-numeric entry") {
        TempJson f("nonnum", R"({"a": [1, "x"]})");
        CHECK_THROWS_AS(import_embeddings(f.path), std::runtime_error);
    }
}

TEST_CASE("project_text") {
    SUBCASE("identity projection leaves unit rows unchanged") {
        const size_t d = 6;
        Tensor raw({2, d});
        raw.at(0, 0) = 1.0;  // unit basis rows
        raw.at(1, 3) = 1.0;
        auto t = make_embedding_table({"x", "y"}, raw, d, 3);
        Tensor eye({d, d}, 0.0);
        for (size_t i = 0; i < d; ++i) eye.at(i, i) = 1.0;
        t.proj_w = eye;
        Bridge b{t, init_signal_encoder({1, d, 4, 6}, 4)};
        Tensor e = project_text(b);
        for (size_t i = 0; i < 2; ++i)
            for (size_t j = 0; j < d; ++j)
                CHECK(e.at(i, j) == doctest::Approx(raw.at(i, j)).epsilon(1e-12));
    }
    SUBCASE("any projection yields unit rows") {
        auto b = make_test_bridge(2, 5, 32, 16, 5);
        Tensor e = project_text(b);
        for (size_t i = 0; i < 5; ++i) {
            double n = 0;
            for (size_t j = 0; j < 16; ++j) n += e.at(i, j) * e.at(i, j);
            CHECK(std::fabs(std::sqrt(n) - 1.0) < 1e-6);
        }
    }
    SUBCASE("gradient through projection and normalization") {
        auto b = make_test_bridge(2, 3, 8, 6, 6);
        Tensor probe = randn({3, 6}, 7);
        auto f = [&](const DiffTensor& w) {
            BridgeGraph g = bind_bridge(b, false);
            g.proj_w = w;
            return sum(mul(project_text(g), constant(probe)));
        };
        CHECK(grad_check(f, b.table.proj_w, 1e-5) < 1e-4);
    }
    SUBCASE("zero vector before normalization raises") {
        Tensor raw({2, 3}, 0.0);
        raw.at(0, 0) = 1.0;  // second row all zeros
        auto t = make_embedding_table({"x", "y"}, raw, 3, 8);
        Tensor zero_w({3, 3}, 0.0);
        t.proj_w = zero_w;  // projects everything to zero
        Bridge b{t, init_signal_encoder({1, 3, 4, 6}, 9)};
        CHECK_THROWS_WITH_AS(project_text(b), doctest::Contains("normalization"),
                             std::runtime_error);
    }
}

TEST_CASE("encode_signal") {
    auto b = make_test_bridge(3, 2, 8, 16, 10);
    SUBCASE("unit norm, deterministic") {
        Tensor x = randn({40, 3}, 11);
        Tensor e1 = encode_signal(x, b);
        Tensor e2 = encode_signal(x, b);
        CHECK(e1.data == e2.data);
        CHECK(e1.shape == std::vector<size_t>{16});
        double n = t_l2norm(e1);
        CHECK(std::fabs(n - 1.0) < 1e-6);
    }
    SUBCASE("scaling the input keeps the norm at one") {
        Tensor x = randn({40, 3}, 12);
        Tensor e = encode_signal(t_scale(x, 10.0), b);
        CHECK(std::fabs(t_l2norm(e) - 1.0) < 1e-6);
    }
    SUBCASE("time reversal of an asymmetric input changes the embedding") {
        Tensor x = randn({40, 3}, 13);
        Tensor xr({40, 3});
        for (size_t t = 0; t < 40; ++t)
            for (size_t c = 0; c < 3; ++c) xr.at(t, c) = x.at(39 - t, c);
        Tensor e = encode_signal(x, b), er = encode_signal(xr, b);
        double diff = 0;
        for (size_t i = 0; i < e.numel(); ++i) diff = std::max(diff, std::fabs(e.data[i] - er.data[i]));
        CHECK(diff > 1e-6);
    }
    SUBCASE("too-short input names the minimum length") {
        CHECK_THROWS_WITH_AS(encode_signal(Tensor({4, 3}, 1.0), b), doctest::Contains("8"),
                             std::invalid_argument);
    }
}

TEST_CASE("info_nce values") {
    SUBCASE("uniform similarities with K=2 give ln 2") {
        Tensor e({1, 4}, {1, 0, 0, 0});
        Tensor texts({2, 4}, {0, 1, 0, 0, 0, 0, 1, 0});  // both orthogonal to e
        auto loss = info_nce(constant(e), constant(texts), {0}, constant(Tensor::scalar(0.0)));
        CHECK(loss.value().data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("perfect positive among orthogonal negatives, tau=1, K=5") {
        Tensor e({1, 8}, 0.0);
        e.data[0] = 1.0;
        Tensor texts({5, 8}, 0.0);
        texts.at(0, 0) = 1.0;  // positive equals e
        for (size_t k = 1; k < 5; ++k) texts.at(k, k) = 1.0;
        auto loss = info_nce(constant(e), constant(texts), {0}, constant(Tensor::scalar(0.0)));
        double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 4.0));
        CHECK(loss.value().data[0] == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("matches a brute-force log-sum-exp oracle on random batches") {
        for (int rep = 0; rep < 20; ++rep) {
            Tensor e = randn({8, 5}, 100 + rep);
            Tensor texts = randn({5, 5}, 200 + rep);
            double tau = 0.05 + 0.1 * rep;
            std::vector<size_t> labels;
            auto rng = make_stream(300 + rep, "labels");
            for (int i = 0; i < 8; ++i) labels.push_back(rng.uniform_int(0, 4));
            auto loss = info_nce(constant(e), constant(texts), labels,
                                 constant(Tensor::scalar(std::log(tau))));
            double acc = 0.0;
            for (size_t b = 0; b < 8; ++b) {
                double mx = -1e300;
                std::vector<double> s(5);
                for (size_t k = 0; k < 5; ++k) {
                    for (size_t j = 0; j < 5; ++j) s[k] += e.at(b, j) * texts.at(k, j);
                    s[k] /= tau;
                    mx = std::max(mx, s[k]);
                }
                double lse = 0.0;
                for (size_t k = 0; k < 5; ++k) lse += std::exp(s[k] - mx);
                lse = mx + std::log(lse);
                acc += lse - s[labels[b]];
            }
            CHECK(loss.value().data[0] == doctest::Approx(acc / 8.0).epsilon(1e-9));
        }
    }
    SUBCASE("loss is non-negative on random fixtures") {
        for (int rep = 0; rep < 50; ++rep) {
            Tensor e = randn({4, 6}, 400 + rep);
            Tensor texts = randn({3, 6}, 500 + rep);
            auto loss = info_nce(constant(e), constant(texts), {0, 1, 2, 0},
                                 constant(Tensor::scalar(std::log(0.07))));
            CHECK(loss.value().data[0] >= 0.0);
        }
    }
    SUBCASE("decreasing tau decreases the loss when the positive dominates") {
        Tensor e({1, 4}, {1, 0, 0, 0});
        Tensor texts({3, 4}, {1, 0, 0, 0, 0.5, 0.86, 0, 0, 0.5, 0, 0.86, 0});
        double prev = 1e300;
        for (double tau : {0.5, 0.2, 0.1, 0.05}) {
            auto loss = info_nce(constant(e), constant(texts), {0},
                                 constant(Tensor::scalar(std::log(tau))));
            CHECK(loss.value().data[0] < prev);
            prev = loss.value().data[0];
        }
    }
    SUBCASE("gradient check on a 4x8 batch") {
        Tensor texts = randn({5, 8}, 600);
        auto f = [&](const DiffTensor& e) {
            return info_nce(e, constant(texts), {0, 2, 4, 1},
                            constant(Tensor::scalar(std::log(0.07))));
        };
        CHECK(grad_check(f, randn({4, 8}, 601), 1e-5) < 1e-4);
    }
    SUBCASE("empty batch raises") {
        CHECK_THROWS_AS(info_nce(constant(Tensor({0, 4})), constant(randn({2, 4}, 14)), {},
                                 constant(Tensor::scalar(0.0))),
                        std::invalid_argument);
    }
}

TEST_CASE("class_log_probs") {
    SUBCASE("K=1 gives log-prob zero") {
        auto b = make_test_bridge(2, 1, 8, 8, 15);
        Tensor lp = class_log_probs(randn({32, 2}, 16), b);
        CHECK(lp.numel() == 1);
        CHECK(lp.data[0] == 0.0);
    }
    SUBCASE("log-softmax is shift invariant") {
        Tensor x = randn({1, 6}, 17);
        auto a = log_softmax(constant(x));
        auto bshift = log_softmax(add_scalar(constant(x), 3.7));
        for (size_t i = 0; i < 6; ++i)
            CHECK(a.value().data[i] == doctest::Approx(bshift.value().data[i]).epsilon(1e-12));
    }
    SUBCASE("probabilities sum to one and argmax matches nearest-by-cosine") {
        auto b = make_test_bridge(3, 5, 16, 12, 18);
        Tensor x = randn({48, 3}, 19);
        Tensor lp = class_log_probs(x, b);
        double s = 0.0;
        for (double v : lp.data) s += std::exp(v);
        CHECK(std::fabs(s - 1.0) < 1e-9);
        Tensor e = encode_signal(x, b);
        Tensor texts = project_text(b);
        size_t best = 0;
        double best_cos = -2;
        for (size_t k = 0; k < 5; ++k) {
            double c = 0;
            for (size_t j = 0; j < 12; ++j) c += e.data[j] * texts.at(k, j);
            if (c > best_cos) {
                best_cos = c;
                best = k;
            }
        }
        size_t arg = 0;
        for (size_t k = 1; k < 5; ++k)
            if (lp.data[k] > lp.data[arg]) arg = k;
        CHECK(arg == best);
    }
    SUBCASE("gradient w.r.t. the input passes a finite-difference check") {
        auto b = make_test_bridge(2, 3, 8, 8, 20);
        auto f = [&](const DiffTensor& x) {
            BridgeGraph g = bind_bridge(b, false);
            return slice(class_log_probs(x, g), 0, 1, 1);
        };
        CHECK(grad_check(f, randn({32, 2}, 21), 1e-5) < 1e-3);
    }
}
