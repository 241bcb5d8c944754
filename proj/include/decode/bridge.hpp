#pragma once

#include <string>
#include <vector>

#include "decode/autodiff.hpp"
#include "decode/tensor.hpp"

namespace decode {

// Frozen text-description embeddings plus the learned projection into the
// shared space. Temperature is stored as log(tau) so tau stays positive.
struct EmbeddingTable {
    std::vector<std::string> labels;  // K unique event names, file order
    Tensor raw_vectors;               // [K x d_raw], frozen
    Tensor proj_w;                    // [d_raw x d_emb]
    Tensor proj_b;                    // [d_emb]
    Tensor log_tau;                   // scalar
    bool collision_warning = false;   // indistinguishable raw vectors present

    size_t n_labels() const { return labels.size(); }
    size_t d_raw() const { return raw_vectors.shape[1]; }
    size_t d_emb() const { return proj_w.shape[1]; }
    double tau() const;
    // -1 when absent
    int label_index(const std::string& label) const;
};

struct SignalEncoderConfig {
    size_t channels = 1;
    size_t d_emb = 64;
    size_t width1 = 16;
    size_t width2 = 32;
    static constexpr size_t kMinInputLen = 8;
};

template <class T>
struct SignalEncoderT {
    T conv1_w, conv1_b;  // [w1 x d x 5], stride 2
    T conv2_w, conv2_b;  // [w2 x w1 x 5], stride 2
    T conv3_w, conv3_b;  // [w2 x w2 x 3], stride 1
    T out_w, out_b;      // [w2 x d_emb]
};

struct SignalEncoder {
    SignalEncoderConfig cfg;
    SignalEncoderT<Tensor> params;
};

// The trainable text-signal alignment bundle.
struct Bridge {
    EmbeddingTable table;
    SignalEncoder encoder;
};

struct BridgeGraph {
    DiffTensor raw;  // frozen
    DiffTensor proj_w, proj_b, log_tau;
    SignalEncoderT<DiffTensor> enc;
    SignalEncoderConfig enc_cfg;
};

// Reads a UTF-8 JSON object {label: [numbers...]} with equal-length vectors.
// The projection is freshly initialized; tau starts at tau_init.
EmbeddingTable import_embeddings(const std::string& path, size_t d_emb = 64, uint64_t seed = 0,
                                 double tau_init = 0.07);
EmbeddingTable make_embedding_table(std::vector<std::string> labels, Tensor raw_vectors,
                                    size_t d_emb, uint64_t seed, double tau_init = 0.07);

SignalEncoder init_signal_encoder(const SignalEncoderConfig& cfg, uint64_t seed);

std::vector<std::pair<std::string, Tensor*>> bridge_param_refs(Bridge& b);
// Bound-leaf views in the same order as bridge_param_refs.
std::vector<DiffTensor*> bridge_graph_refs(BridgeGraph& g);
BridgeGraph bind_bridge(const Bridge& b, bool requires_grad);

// Projected, row-normalized text embeddings [K x d_emb].
DiffTensor project_text(const BridgeGraph& g);
Tensor project_text(const Bridge& b);

// Unit-norm signal embedding [d_emb] of a [T x d] window.
DiffTensor encode_signal(const DiffTensor& x, const BridgeGraph& g);
Tensor encode_signal(const Tensor& x, const Bridge& b);

// Mean over the batch of -log(exp(s+/tau) / sum_j exp(s_j/tau)), the sum
// running over all K text embeddings. K == 1 defines the loss as 0.
DiffTensor info_nce(const DiffTensor& e_ts_batch, const DiffTensor& e_text,
                    const std::vector<size_t>& labels, const DiffTensor& log_tau);

// LogSoftmax of the similarity logits for one window, shape [K].
DiffTensor class_log_probs(const DiffTensor& x, const BridgeGraph& g);
Tensor class_log_probs(const Tensor& x, const Bridge& b);

}  // namespace decode
