#include "decode/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "decode/checkpoint.hpp"
#include "decode/rng.hpp"
#include "decode/threading.hpp"

namespace decode {

void TrainConfig::validate() const {
    if (lr <= 0) throw std::invalid_argument("train config: learning rate must be positive");
    if (ema_decay <= 0 || ema_decay >= 1)
        throw std::invalid_argument("train config: EMA decay must be in (0, 1)");
    if (stride < 1) throw std::invalid_argument("train config: stride must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
    if (w_contrast < 0) throw std::invalid_argument("train config: w_contrast must be >= 0");
    if (t_diff < 1) throw std::invalid_argument("train config: t_diff must be >= 1");
    if (window < 8) throw std::invalid_argument("train config: window must be >= 8");
}

std::vector<WindowRef> sliding_windows(const TrialSet& trials, size_t t_win, size_t stride) {
    if (stride < 1) throw std::invalid_argument("sliding_windows: stride must be >= 1");
    const size_t T = trials.n_samples();
    if (t_win > T)
        throw std::invalid_argument("sliding_windows: window " + std::to_string(t_win) +
                                    " exceeds trial length " + std::to_string(T));
    std::vector<WindowRef> out;
    for (size_t tr = 0; tr < trials.n_trials(); ++tr) {
        const size_t m = trials.marker[tr];
        for (size_t start = 0; start + t_win <= T; start += stride) {
            if (m >= start && m < start + t_win) out.push_back({tr, start});
        }
    }
    return out;
}

ChannelStats compute_channel_stats(const TrialSet& t) {
    const size_t N = t.n_trials(), T = t.n_samples(), d = t.n_channels();
    ChannelStats s;
    s.mean.assign(d, 0.0);
    s.stdev.assign(d, 0.0);
    const double n = static_cast<double>(N * T);
    for (size_t i = 0; i < N * T; ++i)
        for (size_t c = 0; c < d; ++c) s.mean[c] += t.data.data[i * d + c];
    for (size_t c = 0; c < d; ++c) s.mean[c] /= n;
    for (size_t i = 0; i < N * T; ++i)
        for (size_t c = 0; c < d; ++c) {
            double dv = t.data.data[i * d + c] - s.mean[c];
            s.stdev[c] += dv * dv;
        }
    for (size_t c = 0; c < d; ++c) {
        s.stdev[c] = std::sqrt(s.stdev[c] / n);
        if (s.stdev[c] < 1e-12) s.stdev[c] = 1.0;  // constant channel
    }
    return s;
}

Tensor normalize(const Tensor& w, const ChannelStats& s) {
    const size_t d = w.shape.back();
    Tensor out(w.shape);
    for (size_t i = 0; i < w.numel(); ++i) {
        size_t c = i % d;
        out.data[i] = (w.data[i] - s.mean[c]) / s.stdev[c];
    }
    return out;
}

Tensor denormalize(const Tensor& w, const ChannelStats& s) {
    const size_t d = w.shape.back();
    Tensor out(w.shape);
    for (size_t i = 0; i < w.numel(); ++i) {
        size_t c = i % d;
        out.data[i] = w.data[i] * s.stdev[c] + s.mean[c];
    }
    return out;
}

void adam_update(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                 std::vector<Tensor>& m, std::vector<Tensor>& v, int step, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, step);
    const double c2 = 1.0 - std::pow(b2, step);
    for (size_t p = 0; p < params.size(); ++p) {
        auto& pm = m[p].data;
        auto& pv = v[p].data;
        auto& pd = params[p]->data;
        const auto& g = grads[p].data;
        for (size_t i = 0; i < pd.size(); ++i) {
            pm[i] = b1 * pm[i] + (1.0 - b1) * g[i];
            pv[i] = b2 * pv[i] + (1.0 - b2) * g[i] * g[i];
            pd[i] -= lr * (pm[i] / c1) / (std::sqrt(pv[i] / c2) + eps);
        }
    }
}

namespace {

std::vector<Tensor*> all_param_refs(TrainerState& st) {
    std::vector<Tensor*> out;
    for (auto& [name, t] : denoiser_param_refs(st.model.params)) out.push_back(t);
    for (auto& [name, t] : bridge_param_refs(st.bridge)) out.push_back(t);
    return out;
}

size_t resolve_label(const TrainerState& st, const TrialSet& data, size_t trial) {
    int idx = st.bridge.table.label_index(data.labels[trial]);
    if (idx < 0)
        throw std::invalid_argument("train: trial label '" + data.labels[trial] +
                                    "' is not present in the embedding table");
    return static_cast<size_t>(idx);
}

Tensor window_tensor(const TrialSet& data, const WindowRef& w, size_t t_win) {
    const size_t T = data.n_samples(), d = data.n_channels();
    Tensor out({t_win, d});
    const double* src = data.data.data.data() + (w.trial * T + w.start) * d;
    std::copy(src, src + t_win * d, out.data.begin());
    return out;
}

}  // namespace

TrainerState make_trainer(const TrialSet& data, EmbeddingTable table, DenoiserConfig model_cfg,
                          SignalEncoderConfig enc_cfg, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    TrainerState st;
    model_cfg.channels = data.n_channels();
    enc_cfg.channels = data.n_channels();
    enc_cfg.d_emb = table.d_emb();
    st.model = init_denoiser(model_cfg, derive_seed(cfg.seed, "model-init"));
    st.ema = st.model.params;
    st.bridge.table = std::move(table);
    st.bridge.encoder = init_signal_encoder(enc_cfg, derive_seed(cfg.seed, "encoder-init"));
    st.sched = make_cosine_schedule(cfg.t_diff, cfg.cosine_s);
    st.norm = compute_channel_stats(data);
    st.cfg = cfg;
    auto refs = all_param_refs(st);
    for (Tensor* p : refs) {
        st.adam_m.push_back(Tensor::zeros(p->shape));
        st.adam_v.push_back(Tensor::zeros(p->shape));
    }
    // every trial label must resolve against the table
    for (size_t i = 0; i < data.n_trials(); ++i) resolve_label(st, data, i);
    return st;
}

LossRecord train_step(TrainerState& st, const TrialSet& data, const std::vector<WindowRef>& batch,
                      int epoch, int step) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const size_t B = batch.size();
    const size_t n_model = denoiser_param_refs(st.model.params).size();
    const size_t n_bridge = bridge_param_refs(st.bridge).size();
    const bool contrast_on = st.cfg.w_contrast > 0.0 && st.bridge.table.n_labels() > 1;

    struct Slot {
        std::vector<Tensor> grads;
        double l1 = 0, nce = 0;
        int t = 0;
    };
    std::vector<Slot> slots(B);

    parallel_for(B, [&](size_t b) {
        auto rng = make_stream(st.cfg.seed, "train-item", epoch, step, b);
        Tensor x0 = normalize(window_tensor(data, batch[b], st.cfg.window), st.norm);
        const size_t label = resolve_label(st, data, batch[b].trial);
        const int t = static_cast<int>(rng.uniform_int(1, st.cfg.t_diff));
        Tensor noise(x0.shape);
        for (auto& v : noise.data) v = rng.normal();
        Tensor x_t = q_sample(st.sched, x0, t, noise);

        GradTape tape;
        TapeScope scope(tape);
        DenoiserGraph mg = bind_denoiser(st.model, true);
        BridgeGraph bg = bind_bridge(st.bridge, true);
        DiffTensor x0c = make_leaf(x0, false);
        DiffTensor l1 = mean(abs(sub(denoise_graph(mg, st.model.cfg, make_leaf(x_t, false), t),
                                     x0c)));
        DiffTensor loss = l1;
        DiffTensor nce;
        if (contrast_on) {
            DiffTensor e = reshape(encode_signal(x0c, bg), {1, st.bridge.table.d_emb()});
            nce = info_nce(e, project_text(bg), {label}, bg.log_tau);
            loss = add(l1, scale(nce, st.cfg.w_contrast));
        }
        tape.backward(loss);

        Slot& s = slots[b];
        s.t = t;
        s.l1 = l1.value().data[0];
        s.nce = nce.defined() ? nce.value().data[0] : 0.0;
        s.grads.reserve(n_model + n_bridge);
        for (DiffTensor* leaf : denoiser_graph_refs(mg))
            s.grads.push_back(leaf->has_grad() ? leaf->grad() : Tensor::zeros(leaf->shape()));
        for (DiffTensor* leaf : bridge_graph_refs(bg))
            s.grads.push_back(leaf->has_grad() ? leaf->grad() : Tensor::zeros(leaf->shape()));
    });

    LossRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    const double inv_b = 1.0 / static_cast<double>(B);
    for (const Slot& s : slots) {
        rec.l1 += s.l1 * inv_b;
        rec.contrast += s.nce * inv_b;
    }
    rec.total = rec.l1 + st.cfg.w_contrast * rec.contrast;
    if (!std::isfinite(rec.total)) {
        std::ostringstream os;
        os << "train_step: non-finite loss at epoch " << epoch << " step " << step
           << "; batch (trial, t):";
        for (size_t b = 0; b < B; ++b)
            os << " (" << batch[b].trial << ", " << slots[b].t << ")";
        throw std::runtime_error(os.str());
    }

    // deterministic slot-order reduction
    std::vector<Tensor> grads = std::move(slots[0].grads);
    for (size_t b = 1; b < B; ++b)
        for (size_t p = 0; p < grads.size(); ++p)
            for (size_t i = 0; i < grads[p].numel(); ++i)
                grads[p].data[i] += slots[b].grads[p].data[i];
    for (auto& g : grads)
        for (auto& v : g.data) v *= inv_b;

    auto refs = all_param_refs(st);
    ++st.adam_step;
    adam_update(refs, grads, st.adam_m, st.adam_v, st.adam_step, st.cfg.lr);

    auto model_refs = denoiser_param_refs(st.model.params);
    auto ema_refs = denoiser_param_refs(st.ema);
    const double decay = st.cfg.ema_decay;
    for (size_t p = 0; p < model_refs.size(); ++p) {
        auto& e = ema_refs[p].second->data;
        const auto& w = model_refs[p].second->data;
        for (size_t i = 0; i < e.size(); ++i) e[i] = decay * e[i] + (1.0 - decay) * w[i];
    }
    return rec;
}

void train_epochs(TrainerState& st, const TrialSet& data, int n_epochs,
                  std::vector<LossRecord>* log, const std::string& ckpt_path) {
    auto windows = sliding_windows(data, st.cfg.window, st.cfg.stride);
    if (windows.empty())
        throw std::invalid_argument("train: no windows contain an event marker");
    const int last = std::min(st.cfg.epochs, st.epoch + std::max(n_epochs, 0));
    for (int e = st.epoch; e < last; ++e) {
        auto rng = make_stream(st.cfg.seed, "shuffle", e);
        std::vector<size_t> order(windows.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
        int step = 0;
        for (size_t off = 0; off < order.size(); off += st.cfg.batch_size) {
            std::vector<WindowRef> batch;
            for (size_t k = off; k < std::min(order.size(), off + st.cfg.batch_size); ++k)
                batch.push_back(windows[order[k]]);
            LossRecord rec = train_step(st, data, batch, e, step++);
            if (log) log->push_back(rec);
        }
        st.epoch = e + 1;
        if (!ckpt_path.empty() && st.cfg.checkpoint_interval > 0 &&
            (st.epoch % st.cfg.checkpoint_interval == 0 || st.epoch == last))
            save_checkpoint(st, ckpt_path);
    }
}

void write_loss_log(const std::vector<LossRecord>& log, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_loss_log: cannot open " + path);
    os << "epoch,step,total,l1,contrast\n";
    os.precision(17);
    for (const auto& r : log)
        os << r.epoch << "," << r.step << "," << r.total << "," << r.l1 << "," << r.contrast
           << "\n";
}

void save_checkpoint(const TrainerState& st, const std::string& path) {
    CheckpointData ck;
    nlohmann::ordered_json meta;
    meta["epoch"] = st.epoch;
    meta["adam_step"] = st.adam_step;
    meta["train"] = {{"epochs", st.cfg.epochs},
                     {"batch_size", st.cfg.batch_size},
                     {"lr", st.cfg.lr},
                     {"ema_decay", st.cfg.ema_decay},
                     {"w_contrast", st.cfg.w_contrast},
                     {"window", st.cfg.window},
                     {"stride", st.cfg.stride},
                     {"seed", st.cfg.seed},
                     {"checkpoint_interval", st.cfg.checkpoint_interval},
                     {"t_diff", st.cfg.t_diff},
                     {"cosine_s", st.cfg.cosine_s}};
    meta["model"] = {{"channels", st.model.cfg.channels}, {"n_enc", st.model.cfg.n_enc},
                     {"n_dec", st.model.cfg.n_dec},       {"h_dim", st.model.cfg.h_dim},
                     {"n_heads", st.model.cfg.n_heads},   {"poly_degree", st.model.cfg.poly_degree},
                     {"k_freq", st.model.cfg.k_freq}};
    meta["encoder"] = {{"channels", st.bridge.encoder.cfg.channels},
                       {"d_emb", st.bridge.encoder.cfg.d_emb},
                       {"width1", st.bridge.encoder.cfg.width1},
                       {"width2", st.bridge.encoder.cfg.width2}};
    meta["labels"] = st.bridge.table.labels;
    ck.meta_json = meta.dump(2);

    auto& mp = const_cast<TrainerState&>(st);
    for (auto& [name, t] : denoiser_param_refs(mp.model.params))
        ck.tensors.emplace_back("model/" + name, *t);
    for (auto& [name, t] : denoiser_param_refs(mp.ema)) ck.tensors.emplace_back("ema/" + name, *t);
    for (auto& [name, t] : bridge_param_refs(mp.bridge)) ck.tensors.emplace_back(name, *t);
    ck.tensors.emplace_back("table/raw_vectors", st.bridge.table.raw_vectors);
    ck.tensors.emplace_back("norm/mean",
                            Tensor({st.norm.mean.size()}, std::vector<double>(st.norm.mean)));
    ck.tensors.emplace_back("norm/stdev",
                            Tensor({st.norm.stdev.size()}, std::vector<double>(st.norm.stdev)));
    for (size_t p = 0; p < st.adam_m.size(); ++p) {
        ck.tensors.emplace_back("adam_m/" + std::to_string(p), st.adam_m[p]);
        ck.tensors.emplace_back("adam_v/" + std::to_string(p), st.adam_v[p]);
    }
    save_checkpoint_file(path, ck);
}

TrainerState load_checkpoint(const std::string& path) {
    CheckpointData ck = load_checkpoint_file(path);
    nlohmann::ordered_json meta;
    try {
        meta = nlohmann::ordered_json::parse(ck.meta_json);
    } catch (const std::exception& e) {
        throw std::runtime_error("load_checkpoint: corrupt metadata: " + std::string(e.what()));
    }
    TrainerState st;
    const auto& tr = meta.at("train");
    st.cfg.epochs = tr.at("epochs");
    st.cfg.batch_size = tr.at("batch_size");
    st.cfg.lr = tr.at("lr");
    st.cfg.ema_decay = tr.at("ema_decay");
    st.cfg.w_contrast = tr.at("w_contrast");
    st.cfg.window = tr.at("window");
    st.cfg.stride = tr.at("stride");
    st.cfg.seed = tr.at("seed");
    st.cfg.checkpoint_interval = tr.at("checkpoint_interval");
    st.cfg.t_diff = tr.at("t_diff");
    st.cfg.cosine_s = tr.at("cosine_s");
    st.epoch = meta.at("epoch");
    st.adam_step = meta.at("adam_step");

    DenoiserConfig mc;
    const auto& mm = meta.at("model");
    mc.channels = mm.at("channels");
    mc.n_enc = mm.at("n_enc");
    mc.n_dec = mm.at("n_dec");
    mc.h_dim = mm.at("h_dim");
    mc.n_heads = mm.at("n_heads");
    mc.poly_degree = mm.at("poly_degree");
    mc.k_freq = mm.at("k_freq");
    st.model = init_denoiser(mc, 0);
    st.ema = st.model.params;

    SignalEncoderConfig ec;
    const auto& me = meta.at("encoder");
    ec.channels = me.at("channels");
    ec.d_emb = me.at("d_emb");
    ec.width1 = me.at("width1");
    ec.width2 = me.at("width2");
    st.bridge.encoder = init_signal_encoder(ec, 0);
    st.bridge.table.labels = meta.at("labels").get<std::vector<std::string>>();

    std::map<std::string, const Tensor*> by_name;
    for (auto& [name, t] : ck.tensors) by_name[name] = &t;
    auto fetch = [&](const std::string& name) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("load_checkpoint: missing tensor '" + name + "'");
        return *it->second;
    };
    auto assign = [&](Tensor& dst, const std::string& name) {
        const Tensor& src = fetch(name);
        if (src.shape != dst.shape)
            throw std::runtime_error("load_checkpoint: tensor '" + name + "' has shape " +
                                     shape_str(src.shape) + ", expected " + shape_str(dst.shape));
        dst = src;
    };
    for (auto& [name, t] : denoiser_param_refs(st.model.params)) assign(*t, "model/" + name);
    for (auto& [name, t] : denoiser_param_refs(st.ema)) assign(*t, "ema/" + name);
    st.bridge.table.raw_vectors = fetch("table/raw_vectors");
    const size_t K = st.bridge.table.labels.size();
    if (st.bridge.table.raw_vectors.ndim() != 2 || st.bridge.table.raw_vectors.shape[0] != K)
        throw std::runtime_error("load_checkpoint: raw embedding table shape mismatch");
    st.bridge.table.proj_w = Tensor::zeros({st.bridge.table.raw_vectors.shape[1], ec.d_emb});
    st.bridge.table.proj_b = Tensor::zeros({ec.d_emb});
    st.bridge.table.log_tau = Tensor::scalar(0.0);
    for (auto& [name, t] : bridge_param_refs(st.bridge)) assign(*t, name);

    st.norm.mean = fetch("norm/mean").data;
    st.norm.stdev = fetch("norm/stdev").data;
    st.sched = make_cosine_schedule(st.cfg.t_diff, st.cfg.cosine_s);
    auto refs = all_param_refs(st);
    st.adam_m.resize(refs.size());
    st.adam_v.resize(refs.size());
    for (size_t p = 0; p < refs.size(); ++p) {
        st.adam_m[p] = Tensor::zeros(refs[p]->shape);
        st.adam_v[p] = Tensor::zeros(refs[p]->shape);
        assign(st.adam_m[p], "adam_m/" + std::to_string(p));
        assign(st.adam_v[p], "adam_v/" + std::to_string(p));
    }
    return st;
}

}  // namespace decode
