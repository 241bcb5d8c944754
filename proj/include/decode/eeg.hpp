#pragma once

#include <string>
#include <vector>

#include "decode/tensor.hpp"
#include "decode/trialset.hpp"

namespace decode {

struct BandDef {
    std::string name;
    double lo_hz = 0, hi_hz = 0;
};

// theta 4-8, alpha 8-13, beta 13-30, low gamma 30-45 Hz
std::vector<BandDef> standard_bands();

// Zero-phase windowed-sinc bandpass (Hamming), applied forward-backward with
// reflection padding. Output length equals input length.
Tensor bandpass(const Tensor& x, double lo_hz, double hi_hz, double rate_hz);

// Per-sample channel mean removed. Requires d >= 2.
Tensor average_reference(const Tensor& x);

// Per channel, subtract the mean over [marker - pre_window, marker).
Tensor baseline_correct(const Tensor& x, size_t marker, double pre_window_ms, double rate_hz);

// Squared analytic-signal envelope in the band: bandpass, frequency-domain
// Hilbert transform, |.|^2.
Tensor band_power_hilbert(const Tensor& x, const BandDef& band, double rate_hz);

// Percent power change per channel from the pre-stimulus baseline window
// [marker - base, marker) to the active window [marker, marker + active).
// Positive values are ERS, negative ERD.
std::vector<double> erd_ers(const Tensor& power, size_t marker, double base_ms, double active_ms,
                            double rate_hz);

struct WelchResult {
    double t = 0, p = 1, cohens_d = 0;
};

// Welch t statistic (unequal variances, Welch-Satterthwaite df), two-sided
// p, and pooled-SD Cohen's d.
WelchResult welch_stats(const std::vector<double>& a, const std::vector<double>& b);

// Channels ranked descending by |mean amplitude| in the post-stimulus
// window, averaged across condition ERPs. Ties resolve to the lower index.
std::vector<size_t> rank_channels(const std::vector<Tensor>& condition_erps, size_t marker,
                                  double window_lo_ms, double window_hi_ms, double rate_hz);

// Indices of trials whose peak magnitude stays within the threshold.
std::vector<size_t> artifact_keep_mask(const TrialSet& ts, double threshold_uv);
TrialSet select_trials(const TrialSet& ts, const std::vector<size_t>& keep);

struct PrepOptions {
    double artifact_threshold_uv = 100.0;
    double band_lo_hz = 0.1;
    double band_hi_hz = 30.0;
    double baseline_ms = 500.0;
    bool reference_average = true;
};

// reject -> bandpass -> baseline correction -> average referencing
TrialSet preprocess(const TrialSet& ts, const PrepOptions& opt);

// Trial-averaged ERP per condition label, over preprocessed trials.
Tensor condition_erp(const TrialSet& ts, const std::string& label);

}  // namespace decode
