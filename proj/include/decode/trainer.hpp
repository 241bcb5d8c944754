#pragma once

#include <string>
#include <vector>

#include "decode/bridge.hpp"
#include "decode/denoiser.hpp"
#include "decode/schedule.hpp"
#include "decode/trialset.hpp"

namespace decode {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 32;
    double lr = 1e-5;
    double ema_decay = 0.995;
    double w_contrast = 0.1;  // weight of the contrastive term (diffusion L1 weight is 1)
    size_t window = 1075;     // T_win
    size_t stride = 64;
    uint64_t seed = 0;
    int checkpoint_interval = 50;  // epochs between snapshots; <= 0 disables
    int t_diff = 500;
    double cosine_s = 0.008;

    void validate() const;
};

struct WindowRef {
    size_t trial;
    size_t start;
};

// Stride-aligned windows per trial; windows that do not contain the trial's
// event marker are discarded and windows never span trials.
std::vector<WindowRef> sliding_windows(const TrialSet& trials, size_t t_win, size_t stride);

struct ChannelStats {
    std::vector<double> mean, stdev;
};

ChannelStats compute_channel_stats(const TrialSet& t);
Tensor normalize(const Tensor& window, const ChannelStats& s);
Tensor denormalize(const Tensor& window, const ChannelStats& s);

struct LossRecord {
    int epoch = 0;
    int step = 0;
    double total = 0, l1 = 0, contrast = 0;
};

struct TrainerState {
    DenoiserModel model;
    DenoiserParams ema;  // shadow denoiser weights, used at sampling time
    Bridge bridge;
    NoiseSchedule sched;
    ChannelStats norm;
    TrainConfig cfg;
    std::vector<Tensor> adam_m, adam_v;
    int adam_step = 0;
    int epoch = 0;  // completed epochs

    DenoiserModel ema_model() const { return DenoiserModel{model.cfg, ema}; }
};

TrainerState make_trainer(const TrialSet& data, EmbeddingTable table, DenoiserConfig model_cfg,
                          SignalEncoderConfig enc_cfg, const TrainConfig& cfg);

// One Adam step over a batch: per item, draw t and noise, form x_t, predict
// x0, take L1 plus the weighted contrastive loss, then update EMA weights.
LossRecord train_step(TrainerState& st, const TrialSet& data, const std::vector<WindowRef>& batch,
                      int epoch, int step);

// Runs up to n_epochs more epochs (bounded by cfg.epochs). Appends one
// record per step to log; writes snapshots to ckpt_path at the configured
// interval when non-empty.
void train_epochs(TrainerState& st, const TrialSet& data, int n_epochs,
                  std::vector<LossRecord>* log, const std::string& ckpt_path = "");

void save_checkpoint(const TrainerState& st, const std::string& path);
TrainerState load_checkpoint(const std::string& path);

void write_loss_log(const std::vector<LossRecord>& log, const std::string& path);

// Adam with beta = (0.9, 0.999), eps 1e-8, bias correction.
void adam_update(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                 std::vector<Tensor>& m, std::vector<Tensor>& v, int step, double lr);

}  // namespace decode
