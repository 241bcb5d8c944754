#include "decode/bridge.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "decode/rng.hpp"

namespace decode {

namespace {

Tensor xavier2(size_t fan_in, size_t fan_out, std::vector<size_t> shape, RandomStream& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::rand_uniform(std::move(shape), a, rng);
}

// Row L2 normalization; errors on rows with norm < 1e-12.
DiffTensor unit_rows(const DiffTensor& x, const char* who) {
    DiffTensor n2 = sum_axis(mul(x, x), x.shape().size() - 1);
    for (double v : n2.value().data)
        if (v < 1e-24)
            throw std::runtime_error(std::string(who) +
                                     ": zero vector before normalization (norm < 1e-12)");
    std::vector<size_t> col_shape = n2.shape();
    col_shape.push_back(1);
    return mul(x, reshape(power(n2, -0.5), col_shape));
}

// Scans the top-level object keys of a flat JSON file so duplicate labels
// are caught (the DOM parser would silently merge them).
std::vector<std::string> top_level_keys(const std::string& text) {
    std::vector<std::string> keys;
    int depth = 0;
    bool in_string = false, escape = false, key_position = true;
    std::string current;
    for (char c : text) {
        if (in_string) {
            if (escape) {
                current += c;
                escape = false;
            } else if (c == '\\') {
                escape = true;
            } else if (c == '"') {
                in_string = false;
                if (depth == 1 && key_position) keys.push_back(current);
            } else {
                current += c;
            }
            continue;
        }
        switch (c) {
            case '"': in_string = true; current.clear(); break;
            case '{': case '[': ++depth; break;
            case '}': case ']': --depth; break;
            case ':': if (depth == 1) key_position = false; break;
            case ',': if (depth == 1) key_position = true; break;
            default: break;
        }
    }
    return keys;
}

}  // namespace

double EmbeddingTable::tau() const { return std::exp(log_tau.data[0]); }

int EmbeddingTable::label_index(const std::string& label) const {
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) return static_cast<int>(i);
    return -1;
}

EmbeddingTable make_embedding_table(std::vector<std::string> labels, Tensor raw_vectors,
                                    size_t d_emb, uint64_t seed, double tau_init) {
    if (labels.empty()) throw std::invalid_argument("embedding table: no labels");
    if (raw_vectors.ndim() != 2 || raw_vectors.shape[0] != labels.size())
        throw std::invalid_argument("embedding table: raw vectors must be [K x d_raw]");
    for (size_t i = 0; i < labels.size(); ++i)
        for (size_t j = i + 1; j < labels.size(); ++j)
            if (labels[i] == labels[j])
                throw std::invalid_argument("embedding table: duplicate label '" + labels[i] + "'");
    if (tau_init <= 0.0) throw std::invalid_argument("embedding table: tau must be positive");

    EmbeddingTable t;
    t.labels = std::move(labels);
    t.raw_vectors = std::move(raw_vectors);
    auto rng = make_stream(seed, "text-proj");
    const size_t d_raw = t.raw_vectors.shape[1];
    t.proj_w = xavier2(d_raw, d_emb, {d_raw, d_emb}, rng);
    t.proj_b = Tensor::zeros({d_emb});
    t.log_tau = Tensor::scalar(std::log(tau_init));

    // pairwise cosine == 1 -> classes indistinguishable
    const size_t K = t.n_labels();
    for (size_t i = 0; i < K && !t.collision_warning; ++i)
        for (size_t j = i + 1; j < K; ++j) {
            double dot = 0, ni = 0, nj = 0;
            for (size_t c = 0; c < d_raw; ++c) {
                double a = t.raw_vectors.at(i, c), b = t.raw_vectors.at(j, c);
                dot += a * b;
                ni += a * a;
                nj += b * b;
            }
            double denom = std::sqrt(ni * nj);
            if (denom > 0 && dot / denom > 1.0 - 1e-9) {
                std::cerr << "warning: embeddings for '" << t.labels[i] << "' and '"
                          << t.labels[j] << "' are colinear; classes are indistinguishable\n";
                t.collision_warning = true;
                break;
            }
        }
    return t;
}

EmbeddingTable import_embeddings(const std::string& path, size_t d_emb, uint64_t seed,
                                 double tau_init) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("import_embeddings: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();

    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw std::runtime_error("import_embeddings: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || j.empty())
        throw std::runtime_error("import_embeddings: " + path +
                                 " must be a non-empty JSON object of label -> vector");
    auto keys = top_level_keys(text);
    for (size_t i = 0; i < keys.size(); ++i)
        for (size_t k = i + 1; k < keys.size(); ++k)
            if (keys[i] == keys[k])
                throw std::runtime_error("import_embeddings: duplicate label '" + keys[i] + "'");

    std::vector<std::string> labels;
    std::vector<std::vector<double>> rows;
    for (auto& [label, value] : j.items()) {
        if (!value.is_array() || value.empty())
            throw std::runtime_error("import_embeddings: label '" + label +
                                     "' must map to a non-empty array of numbers");
        std::vector<double> row;
        row.reserve(value.size());
        for (auto& v : value) {
            if (!v.is_number())
                throw std::runtime_error("import_embeddings: label '" + label +
                                         "' contains a non-numeric entry");
            row.push_back(v.get<double>());
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw std::runtime_error("import_embeddings: dimension mismatch: label '" + label +
                                     "' has " + std::to_string(row.size()) + " values, expected " +
                                     std::to_string(rows.front().size()));
        labels.push_back(label);
        rows.push_back(std::move(row));
    }
    const size_t K = labels.size(), d_raw = rows.front().size();
    Tensor raw({K, d_raw});
    for (size_t i = 0; i < K; ++i)
        std::copy(rows[i].begin(), rows[i].end(), raw.data.begin() + i * d_raw);
    return make_embedding_table(std::move(labels), std::move(raw), d_emb, seed, tau_init);
}

SignalEncoder init_signal_encoder(const SignalEncoderConfig& cfg, uint64_t seed) {
    auto rng = make_stream(seed, "sig-enc");
    SignalEncoder e;
    e.cfg = cfg;
    const size_t d = cfg.channels, w1 = cfg.width1, w2 = cfg.width2;
    e.params.conv1_w = xavier2(d * 5, w1 * 5, {w1, d, 5}, rng);
    e.params.conv1_b = Tensor::zeros({w1});
    e.params.conv2_w = xavier2(w1 * 5, w2 * 5, {w2, w1, 5}, rng);
    e.params.conv2_b = Tensor::zeros({w2});
    e.params.conv3_w = xavier2(w2 * 3, w2 * 3, {w2, w2, 3}, rng);
    e.params.conv3_b = Tensor::zeros({w2});
    e.params.out_w = xavier2(w2, cfg.d_emb, {w2, cfg.d_emb}, rng);
    e.params.out_b = Tensor::zeros({cfg.d_emb});
    return e;
}

std::vector<std::pair<std::string, Tensor*>> bridge_param_refs(Bridge& b) {
    return {
        {"bridge.proj_w", &b.table.proj_w},     {"bridge.proj_b", &b.table.proj_b},
        {"bridge.log_tau", &b.table.log_tau},   {"bridge.conv1_w", &b.encoder.params.conv1_w},
        {"bridge.conv1_b", &b.encoder.params.conv1_b},
        {"bridge.conv2_w", &b.encoder.params.conv2_w},
        {"bridge.conv2_b", &b.encoder.params.conv2_b},
        {"bridge.conv3_w", &b.encoder.params.conv3_w},
        {"bridge.conv3_b", &b.encoder.params.conv3_b},
        {"bridge.out_w", &b.encoder.params.out_w},
        {"bridge.out_b", &b.encoder.params.out_b},
    };
}

std::vector<DiffTensor*> bridge_graph_refs(BridgeGraph& g) {
    return {&g.proj_w,      &g.proj_b,      &g.log_tau,     &g.enc.conv1_w,
            &g.enc.conv1_b, &g.enc.conv2_w, &g.enc.conv2_b, &g.enc.conv3_w,
            &g.enc.conv3_b, &g.enc.out_w,   &g.enc.out_b};
}

BridgeGraph bind_bridge(const Bridge& b, bool requires_grad) {
    BridgeGraph g;
    g.raw = make_leaf(b.table.raw_vectors, false);  // frozen
    g.proj_w = make_leaf(b.table.proj_w, requires_grad);
    g.proj_b = make_leaf(b.table.proj_b, requires_grad);
    g.log_tau = make_leaf(b.table.log_tau, requires_grad);
    g.enc.conv1_w = make_leaf(b.encoder.params.conv1_w, requires_grad);
    g.enc.conv1_b = make_leaf(b.encoder.params.conv1_b, requires_grad);
    g.enc.conv2_w = make_leaf(b.encoder.params.conv2_w, requires_grad);
    g.enc.conv2_b = make_leaf(b.encoder.params.conv2_b, requires_grad);
    g.enc.conv3_w = make_leaf(b.encoder.params.conv3_w, requires_grad);
    g.enc.conv3_b = make_leaf(b.encoder.params.conv3_b, requires_grad);
    g.enc.out_w = make_leaf(b.encoder.params.out_w, requires_grad);
    g.enc.out_b = make_leaf(b.encoder.params.out_b, requires_grad);
    g.enc_cfg = b.encoder.cfg;
    return g;
}

DiffTensor project_text(const BridgeGraph& g) {
    return unit_rows(add(matmul(g.raw, g.proj_w), g.proj_b), "project_text");
}

Tensor project_text(const Bridge& b) {
    return project_text(bind_bridge(b, false)).value();
}

DiffTensor encode_signal(const DiffTensor& x, const BridgeGraph& g) {
    if (x.shape().size() != 2)
        throw std::invalid_argument("encode_signal: expected [T x d], got " +
                                    shape_str(x.shape()));
    if (x.shape()[1] != g.enc_cfg.channels)
        throw std::invalid_argument("encode_signal: input has " + std::to_string(x.shape()[1]) +
                                    " channels but the encoder expects " +
                                    std::to_string(g.enc_cfg.channels));
    if (x.shape()[0] < SignalEncoderConfig::kMinInputLen)
        throw std::invalid_argument(
            "encode_signal: input length " + std::to_string(x.shape()[0]) +
            " below the minimum receptive field of " +
            std::to_string(SignalEncoderConfig::kMinInputLen) + " samples");
    DiffTensor h = gelu(add(conv1d(x, g.enc.conv1_w, 2, 2), g.enc.conv1_b));
    h = gelu(add(conv1d(h, g.enc.conv2_w, 2, 2), g.enc.conv2_b));
    h = gelu(add(conv1d(h, g.enc.conv3_w, 1, 1), g.enc.conv3_b));
    DiffTensor pooled = reshape(mean_axis(h, 0), {1, g.enc_cfg.width2});
    DiffTensor e = add(matmul(pooled, g.enc.out_w), g.enc.out_b);
    return reshape(unit_rows(e, "encode_signal"), {g.enc_cfg.d_emb});
}

Tensor encode_signal(const Tensor& x, const Bridge& b) {
    return encode_signal(make_leaf(x, false), bind_bridge(b, false)).value();
}

DiffTensor info_nce(const DiffTensor& e_ts_batch, const DiffTensor& e_text,
                    const std::vector<size_t>& labels, const DiffTensor& log_tau) {
    if (e_ts_batch.shape().size() != 2 || e_text.shape().size() != 2)
        throw std::invalid_argument("info_nce: expected [B x d] and [K x d] inputs");
    const size_t B = e_ts_batch.shape()[0], K = e_text.shape()[0];
    if (B == 0) throw std::invalid_argument("info_nce: empty batch");
    if (labels.size() != B)
        throw std::invalid_argument("info_nce: got " + std::to_string(labels.size()) +
                                    " labels for a batch of " + std::to_string(B));
    for (size_t l : labels)
        if (l >= K)
            throw std::invalid_argument("info_nce: label index " + std::to_string(l) +
                                        " out of range [0, " + std::to_string(K) + ")");
    if (K == 1) return constant(Tensor::scalar(0.0));  // degenerate by definition
    DiffTensor logits =
        mul(matmul(e_ts_batch, transpose(e_text)), exp(neg(log_tau)));
    DiffTensor lsm = log_softmax(logits);
    Tensor onehot({B, K}, 0.0);
    for (size_t b = 0; b < B; ++b) onehot.at(b, labels[b]) = 1.0;
    return neg(mean(sum_axis(mul(lsm, constant(onehot)), 1)));
}

DiffTensor class_log_probs(const DiffTensor& x, const BridgeGraph& g) {
    DiffTensor e = reshape(encode_signal(x, g), {1, g.enc_cfg.d_emb});
    DiffTensor logits = mul(matmul(e, transpose(project_text(g))), exp(neg(g.log_tau)));
    const size_t K = logits.shape()[1];
    return reshape(log_softmax(logits), {K});
}

Tensor class_log_probs(const Tensor& x, const Bridge& b) {
    return class_log_probs(make_leaf(x, false), bind_bridge(b, false)).value();
}

}  // namespace decode
