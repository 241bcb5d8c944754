#include "decode/denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "decode/rng.hpp"

namespace decode {

namespace {

constexpr double kSinBase = 10000.0;

template <class T, class F>
void visit_linear(const std::string& p, LinearT<T>& l, F&& f) {
    f(p + ".w", l.w);
    f(p + ".b", l.b);
}

template <class T, class F>
void visit_adaln(const std::string& p, AdaLNT<T>& a, F&& f) {
    visit_linear(p + ".scale", a.scale, f);
    visit_linear(p + ".shift", a.shift, f);
}

template <class T, class F>
void visit_attn(const std::string& p, AttnT<T>& a, F&& f) {
    visit_linear(p + ".q", a.q, f);
    visit_linear(p + ".k", a.k, f);
    visit_linear(p + ".v", a.v, f);
    visit_linear(p + ".o", a.o, f);
}

template <class T, class F>
void visit_net(DenoiserNetT<T>& n, F&& f) {
    visit_linear("input_proj", n.input_proj, f);
    visit_linear("t_mlp1", n.t_mlp1, f);
    visit_linear("t_mlp2", n.t_mlp2, f);
    for (size_t i = 0; i < n.enc.size(); ++i) {
        std::string p = "enc" + std::to_string(i);
        visit_adaln(p + ".ln1", n.enc[i].ln1, f);
        visit_adaln(p + ".ln2", n.enc[i].ln2, f);
        visit_attn(p + ".attn", n.enc[i].attn, f);
        visit_linear(p + ".ff1", n.enc[i].ff1, f);
        visit_linear(p + ".ff2", n.enc[i].ff2, f);
    }
    for (size_t i = 0; i < n.dec.size(); ++i) {
        std::string p = "dec" + std::to_string(i);
        visit_adaln(p + ".ln1", n.dec[i].ln1, f);
        visit_adaln(p + ".ln2", n.dec[i].ln2, f);
        visit_adaln(p + ".ln3", n.dec[i].ln3, f);
        visit_attn(p + ".self", n.dec[i].self_attn, f);
        visit_attn(p + ".cross", n.dec[i].cross_attn, f);
        visit_linear(p + ".ff1", n.dec[i].ff1, f);
        visit_linear(p + ".ff2", n.dec[i].ff2, f);
        visit_linear(p + ".trend", n.dec[i].trend_head, f);
        visit_linear(p + ".season", n.dec[i].season_proj, f);
    }
    visit_linear("residual_head", n.residual_head, f);
}

Tensor xavier(size_t fan_in, size_t fan_out, RandomStream& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::rand_uniform({fan_in, fan_out}, a, rng);
}

LinearT<Tensor> make_linear(size_t in, size_t out, RandomStream& rng, bool zero = false) {
    LinearT<Tensor> l;
    l.w = zero ? Tensor::zeros({in, out}) : xavier(in, out, rng);
    l.b = Tensor::zeros({out});
    return l;
}

AdaLNT<Tensor> make_adaln(size_t h, RandomStream& rng) {
    AdaLNT<Tensor> a;
    // small random projections: near plain layer norm at init, but the
    // timestep branch is live from the first step
    a.scale = make_linear(h, h, rng);
    a.shift = make_linear(h, h, rng);
    for (auto* l : {&a.scale, &a.shift})
        for (auto& v : l->w.data) v *= 0.1;
    return a;
}

AttnT<Tensor> make_attn(size_t h, RandomStream& rng) {
    return {make_linear(h, h, rng), make_linear(h, h, rng), make_linear(h, h, rng),
            make_linear(h, h, rng)};
}

// y = x W + b with row-broadcast bias
DiffTensor linear(const DiffTensor& x, const LinearT<DiffTensor>& l) {
    return add(matmul(x, l.w), l.b);
}

DiffTensor ffn(const DiffTensor& x, const LinearT<DiffTensor>& f1, const LinearT<DiffTensor>& f2) {
    return linear(gelu(linear(x, f1)), f2);
}

DiffTensor multihead_attention(const DiffTensor& q_in, const DiffTensor& kv_in,
                               const AttnT<DiffTensor>& p, size_t n_heads) {
    const size_t h = q_in.shape()[1];
    const size_t dh = h / n_heads;
    DiffTensor Q = linear(q_in, p.q);
    DiffTensor K = linear(kv_in, p.k);
    DiffTensor V = linear(kv_in, p.v);
    std::vector<DiffTensor> ctx;
    ctx.reserve(n_heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (size_t j = 0; j < n_heads; ++j) {
        DiffTensor qj = slice(Q, 1, j * dh, dh);
        DiffTensor kj = slice(K, 1, j * dh, dh);
        DiffTensor vj = slice(V, 1, j * dh, dh);
        DiffTensor scores = scale(matmul(qj, transpose(kj)), inv_sqrt);
        ctx.push_back(matmul(softmax(scores), vj));
    }
    return linear(concat(ctx, 1), p.o);
}

// mean-pool the token axis by the given factor; a ragged tail is pooled
// over its own length
DiffTensor avg_pool_tokens(const DiffTensor& x, size_t factor) {
    const size_t T = x.shape()[0], h = x.shape()[1];
    const size_t full = (T / factor) * factor;
    if (full == 0) return reshape(mean_axis(x, 0), {1, h});
    DiffTensor head = slice(x, 0, 0, full);
    DiffTensor pooled = mean_axis(reshape(head, {full / factor, factor, h}), 1);
    if (full == T) return pooled;
    DiffTensor tail = slice(x, 0, full, T - full);
    return concat({pooled, reshape(mean_axis(tail, 0), {1, h})}, 0);
}

Tensor time_basis(size_t t_win, size_t degree) {
    Tensor b({t_win, degree + 1});
    for (size_t n = 0; n < t_win; ++n) {
        double u = static_cast<double>(n) / static_cast<double>(t_win);
        double p = 1.0;
        for (size_t j = 0; j <= degree; ++j) {
            b.at(n, j) = p;
            p *= u;
        }
    }
    return b;
}

}  // namespace

DenoiserModel init_denoiser(const DenoiserConfig& cfg, uint64_t seed) {
    if (cfg.h_dim % cfg.n_heads != 0)
        throw std::invalid_argument("init_denoiser: h_dim must be divisible by n_heads");
    if (cfg.channels < 1 || cfg.n_enc < 1 || cfg.n_dec < 1 || cfg.poly_degree < 1 ||
        cfg.k_freq < 1)
        throw std::invalid_argument("init_denoiser: invalid configuration");
    auto rng = make_stream(seed, "denoiser-init");
    DenoiserModel m;
    m.cfg = cfg;
    const size_t h = cfg.h_dim, d = cfg.channels;
    auto& n = m.params;
    n.input_proj = make_linear(d, h, rng);
    n.t_mlp1 = make_linear(h, h, rng);
    n.t_mlp2 = make_linear(h, h, rng);
    n.enc.resize(cfg.n_enc);
    for (auto& b : n.enc) {
        b.ln1 = make_adaln(h, rng);
        b.ln2 = make_adaln(h, rng);
        b.attn = make_attn(h, rng);
        b.ff1 = make_linear(h, 4 * h, rng);
        b.ff2 = make_linear(4 * h, h, rng);
    }
    n.dec.resize(cfg.n_dec);
    for (auto& b : n.dec) {
        b.ln1 = make_adaln(h, rng);
        b.ln2 = make_adaln(h, rng);
        b.ln3 = make_adaln(h, rng);
        b.self_attn = make_attn(h, rng);
        b.cross_attn = make_attn(h, rng);
        b.ff1 = make_linear(h, 4 * h, rng);
        b.ff2 = make_linear(4 * h, h, rng);
        b.trend_head = make_linear(h, (cfg.poly_degree + 1) * d, rng, cfg.zero_init_heads);
        b.season_proj = make_linear(h, d, rng, cfg.zero_init_heads);
    }
    n.residual_head = make_linear(h, d, rng, cfg.zero_init_heads);
    return m;
}

std::vector<std::pair<std::string, Tensor*>> denoiser_param_refs(DenoiserParams& p) {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit_net(p, [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> denoiser_param_refs(const DenoiserParams& p) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    visit_net(const_cast<DenoiserParams&>(p),
              [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

std::vector<DiffTensor*> denoiser_graph_refs(DenoiserGraph& g) {
    std::vector<DiffTensor*> out;
    visit_net(g, [&](const std::string&, DiffTensor& t) { out.push_back(&t); });
    return out;
}

DenoiserGraph bind_denoiser(const DenoiserModel& m, bool requires_grad) {
    DenoiserGraph g;
    g.enc.resize(m.params.enc.size());
    g.dec.resize(m.params.dec.size());
    std::vector<DiffTensor*> slots;
    visit_net(g, [&](const std::string&, DiffTensor& t) { slots.push_back(&t); });
    size_t i = 0;
    visit_net(const_cast<DenoiserParams&>(m.params), [&](const std::string&, Tensor& t) {
        *slots[i++] = make_leaf(t, requires_grad);
    });
    return g;
}

Tensor sinusoidal_features(double pos, size_t dim) {
    Tensor f({dim});
    const size_t half = dim / 2;
    for (size_t i = 0; i < half; ++i) {
        double freq = std::pow(kSinBase, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        f.data[i] = std::sin(pos * freq);
        f.data[half + i] = std::cos(pos * freq);
    }
    if (dim % 2) f.data[dim - 1] = std::sin(pos);
    return f;
}

DiffTensor timestep_embedding(const DenoiserGraph& g, size_t h_dim, int t) {
    DiffTensor feat = constant(Tensor({1, h_dim}, sinusoidal_features(t, h_dim).data));
    return linear(gelu(linear(feat, g.t_mlp1)), g.t_mlp2);
}

DiffTensor ada_layer_norm(const DiffTensor& h, const DiffTensor& t_emb,
                          const AdaLNT<DiffTensor>& p) {
    const size_t width = h.shape().back();
    DiffTensor sc = reshape(linear(t_emb, p.scale), {width});
    DiffTensor sh = reshape(linear(t_emb, p.shift), {width});
    return add(mul(layer_norm(h), add_scalar(sc, 1.0)), sh);
}

DiffTensor trend_synthesis(const DiffTensor& coeff, size_t t_win) {
    if (coeff.shape().size() != 2)
        throw std::invalid_argument("trend_synthesis: coeff must be [(p+1) x d], got " +
                                    shape_str(coeff.shape()));
    return matmul(constant(time_basis(t_win, coeff.shape()[0] - 1)), coeff);
}

DiffTensor fourier_synthesis(const DiffTensor& block_repr, size_t k_freq) {
    return fourier_topk_filter(block_repr, k_freq);
}

DiffTensor denoise_graph(const DenoiserGraph& g, const DenoiserConfig& cfg, const DiffTensor& x_t,
                         int t, DenoisePartsGraph* parts) {
    if (x_t.shape().size() != 2)
        throw std::invalid_argument("denoise: expected [T x d] input, got " +
                                    shape_str(x_t.shape()));
    const size_t T = x_t.shape()[0], d = x_t.shape()[1];
    if (d != cfg.channels)
        throw std::invalid_argument("denoise: input has " + std::to_string(d) +
                                    " channels but the model expects " +
                                    std::to_string(cfg.channels));
    if (T < 8) throw std::invalid_argument("denoise: window length must be >= 8");
    if (t < 1) throw std::invalid_argument("denoise: timestep must be >= 1");

    DiffTensor t_emb = timestep_embedding(g, cfg.h_dim, t);

    Tensor pe({T, cfg.h_dim});
    for (size_t n = 0; n < T; ++n) {
        Tensor row = sinusoidal_features(static_cast<double>(n), cfg.h_dim);
        std::copy(row.data.begin(), row.data.end(), pe.data.begin() + n * cfg.h_dim);
    }
    DiffTensor embedded = add(linear(x_t, g.input_proj), constant(pe));

    DiffTensor tokens = embedded;
    for (const auto& b : g.enc) {
        DiffTensor a = ada_layer_norm(tokens, t_emb, b.ln1);
        tokens = add(tokens, multihead_attention(a, a, b.attn, cfg.n_heads));
        tokens = add(tokens, ffn(ada_layer_norm(tokens, t_emb, b.ln2), b.ff1, b.ff2));
    }
    const DiffTensor memory = tokens;

    const size_t k_eff = std::min(cfg.k_freq, T / 2);
    DiffTensor state = embedded;
    DiffTensor trend;
    std::vector<DiffTensor> seasonal;
    for (const auto& b : g.dec) {
        DiffTensor s1 = ada_layer_norm(state, t_emb, b.ln1);
        state = add(state, multihead_attention(s1, s1, b.self_attn, cfg.n_heads));
        state = add(state, multihead_attention(ada_layer_norm(state, t_emb, b.ln2), memory,
                                               b.cross_attn, cfg.n_heads));
        state = add(state, ffn(ada_layer_norm(state, t_emb, b.ln3), b.ff1, b.ff2));

        DiffTensor pooled = avg_pool_tokens(state, 4);
        DiffTensor coeff =
            reshape(linear(reshape(mean_axis(pooled, 0), {1, cfg.h_dim}), b.trend_head),
                    {cfg.poly_degree + 1, d});
        DiffTensor tr = trend_synthesis(coeff, T);
        trend = trend.defined() ? add(trend, tr) : tr;
        seasonal.push_back(fourier_synthesis(linear(state, b.season_proj), k_eff));
    }
    DiffTensor residual = linear(state, g.residual_head);

    DiffTensor out = trend;
    for (const auto& s : seasonal) out = add(out, s);
    out = add(out, residual);
    if (parts) {
        parts->trend = trend;
        parts->seasonal = seasonal;
        parts->residual = residual;
    }
    return out;
}

Tensor denoise(const DenoiserModel& m, const Tensor& x_t, int t, DenoiseParts* parts) {
    DenoiserGraph g = bind_denoiser(m, false);
    DenoisePartsGraph pg;
    DiffTensor out = denoise_graph(g, m.cfg, make_leaf(x_t, false), t, parts ? &pg : nullptr);
    if (parts) {
        parts->trend = pg.trend.value();
        parts->seasonal.clear();
        for (auto& s : pg.seasonal) parts->seasonal.push_back(s.value());
        parts->residual = pg.residual.value();
    }
    return out.value();
}

}  // namespace decode
