#pragma once

#include <string>
#include <vector>

#include "decode/autodiff.hpp"
#include "decode/tensor.hpp"

namespace decode {

struct DenoiserConfig {
    size_t channels = 1;     // d, set from data
    size_t n_enc = 3;
    size_t n_dec = 2;
    size_t h_dim = 96;
    size_t n_heads = 4;
    size_t poly_degree = 3;  // trend polynomial degree p
    size_t k_freq = 5;       // dominant Fourier bins per seasonal head
    bool zero_init_heads = false;
};

// Parameter layout shared between the plain (Tensor) and bound (DiffTensor)
// forms of the network; bind() zips the two in visit order.
template <class T>
struct LinearT {
    T w, b;
};

template <class T>
struct AdaLNT {
    LinearT<T> scale, shift;
};

template <class T>
struct AttnT {
    LinearT<T> q, k, v, o;
};

template <class T>
struct EncBlockT {
    AdaLNT<T> ln1, ln2;
    AttnT<T> attn;
    LinearT<T> ff1, ff2;
};

template <class T>
struct DecBlockT {
    AdaLNT<T> ln1, ln2, ln3;
    AttnT<T> self_attn, cross_attn;
    LinearT<T> ff1, ff2;
    LinearT<T> trend_head;   // h -> (p+1)*d
    LinearT<T> season_proj;  // h -> d
};

template <class T>
struct DenoiserNetT {
    LinearT<T> input_proj;  // d -> h
    LinearT<T> t_mlp1, t_mlp2;
    std::vector<EncBlockT<T>> enc;
    std::vector<DecBlockT<T>> dec;
    LinearT<T> residual_head;  // h -> d
};

using DenoiserParams = DenoiserNetT<Tensor>;
using DenoiserGraph = DenoiserNetT<DiffTensor>;

struct DenoiserModel {
    DenoiserConfig cfg;
    DenoiserParams params;
};

DenoiserModel init_denoiser(const DenoiserConfig& cfg, uint64_t seed);

// Named views of every parameter tensor, in a fixed deterministic order.
std::vector<std::pair<std::string, Tensor*>> denoiser_param_refs(DenoiserParams& p);
std::vector<std::pair<std::string, const Tensor*>> denoiser_param_refs(const DenoiserParams& p);
// Bound-leaf views in the same order.
std::vector<DiffTensor*> denoiser_graph_refs(DenoiserGraph& g);

// Leaf-bind the parameters onto the active tape (one binding per tape).
DenoiserGraph bind_denoiser(const DenoiserModel& m, bool requires_grad);

struct DenoiseParts {
    Tensor trend;
    std::vector<Tensor> seasonal;  // one per decoder block
    Tensor residual;
};

struct DenoisePartsGraph {
    DiffTensor trend;
    std::vector<DiffTensor> seasonal;
    DiffTensor residual;
};

// Differentiable forward pass: predicts the clean signal from (x_t, t) as
// trend + seasonal components + residual; the returned value is built by
// summing exactly the tensors reported in parts.
DiffTensor denoise_graph(const DenoiserGraph& g, const DenoiserConfig& cfg, const DiffTensor& x_t,
                         int t, DenoisePartsGraph* parts = nullptr);

// Tape-free evaluation.
Tensor denoise(const DenoiserModel& m, const Tensor& x_t, int t, DenoiseParts* parts = nullptr);

// Polynomial trend basis evaluation: rows n = 0..T-1, columns (n/T)^j.
DiffTensor trend_synthesis(const DiffTensor& coeff, size_t t_win);

// Dominant-frequency band filter, one seasonal layer (alias of the primitive).
DiffTensor fourier_synthesis(const DiffTensor& block_repr, size_t k_freq);

// Timestep-conditioned layer norm: normalize(h) * (1 + scale(t)) + shift(t).
DiffTensor ada_layer_norm(const DiffTensor& h, const DiffTensor& t_emb, const AdaLNT<DiffTensor>& p);

// Sinusoidal features (dimension h_dim) followed by the learned 2-layer map.
DiffTensor timestep_embedding(const DenoiserGraph& g, size_t h_dim, int t);
Tensor sinusoidal_features(double pos, size_t dim);

}  // namespace decode
