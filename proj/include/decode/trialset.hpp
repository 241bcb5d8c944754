#pragma once

#include <string>
#include <vector>

#include "decode/tensor.hpp"

namespace decode {

// A collection of independent event-labeled trials, all (T x d) at a common
// sampling rate. Values are in microvolts.
struct TrialSet {
    Tensor data;                      // [N x T x d]
    std::vector<std::string> labels;  // per-trial event name
    std::vector<size_t> marker;       // per-trial stimulus sample index
    double rate_hz = 0.0;
    std::vector<std::string> channel_names;

    size_t n_trials() const { return data.ndim() == 3 ? data.shape[0] : 0; }
    size_t n_samples() const { return data.ndim() == 3 ? data.shape[1] : 0; }
    size_t n_channels() const { return data.ndim() == 3 ? data.shape[2] : 0; }

    Tensor trial(size_t i) const;  // [T x d] copy
    void set_trial(size_t i, const Tensor& t);
    void validate() const;
};

// On-disk layout: <stem>.btf (f64 [N x T x d]) plus <stem>.labels.csv with
// one header line (rate_hz, channel names) and one row per trial
// (label, marker).
void save_trialset(const TrialSet& ts, const std::string& stem);
TrialSet load_trialset(const std::string& stem);

// CSV import of a single trial: header row of channel names, a metadata line
// "# marker=<idx> rate=<hz>", then one row of channel values per sample.
Tensor read_trial_csv(const std::string& path, size_t* marker, double* rate,
                      std::vector<std::string>* channel_names);

}  // namespace decode
