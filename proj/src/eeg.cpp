#include "decode/eeg.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

#include "decode/fft.hpp"
#include "decode/stats.hpp"
#include "decode/threading.hpp"

namespace decode {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

void check_band(double lo, double hi, double rate, const char* op) {
    if (!(lo > 0.0) || !(hi > lo) || !(hi < rate / 2.0))
        throw std::invalid_argument(std::string(op) + ": band [" + std::to_string(lo) + ", " +
                                    std::to_string(hi) + "] Hz invalid for rate " +
                                    std::to_string(rate) + " Hz (need 0 < lo < hi < rate/2)");
}

// Hamming-windowed sinc bandpass kernel, odd length.
std::vector<double> design_bandpass(double lo, double hi, double rate, size_t t_len) {
    const double delta = std::min(lo, rate / 2.0 - hi);
    size_t taps = static_cast<size_t>(std::ceil(3.3 * rate / delta));
    const size_t cap = std::min<size_t>(4001, t_len > 1 ? t_len - 1 : 1);
    taps = std::min(taps, cap);
    if (taps % 2 == 0) ++taps;
    const double f1 = lo / rate, f2 = hi / rate;
    const long M = static_cast<long>(taps / 2);
    std::vector<double> h(taps);
    for (long n = 0; n < static_cast<long>(taps); ++n) {
        long k = n - M;
        double ideal = k == 0 ? 2.0 * (f2 - f1)
                              : (std::sin(2.0 * kPi * f2 * k) - std::sin(2.0 * kPi * f1 * k)) /
                                    (kPi * k);
        double w = 0.54 - 0.46 * std::cos(2.0 * kPi * n / (taps - 1));
        h[n] = ideal * w;
    }
    return h;
}

// centered same-length convolution with reflection padding
std::vector<double> conv_same_reflect(const std::vector<double>& x, const std::vector<double>& h) {
    const long T = static_cast<long>(x.size());
    const long M = static_cast<long>(h.size() / 2);
    auto sample = [&](long i) {
        // reflect without repeating the edge sample
        while (i < 0 || i >= T) {
            if (i < 0) i = -i;
            if (i >= T) i = 2 * (T - 1) - i;
        }
        return x[i];
    };
    std::vector<double> y(T);
    for (long t = 0; t < T; ++t) {
        double acc = 0.0;
        for (long k = -M; k <= M; ++k) acc += h[M + k] * sample(t + k);
        y[t] = acc;
    }
    return y;
}

size_t ms_to_samples(double ms, double rate) {
    return static_cast<size_t>(std::llround(ms * rate / 1000.0));
}

}  // namespace

std::vector<BandDef> standard_bands() {
    return {{"theta", 4.0, 8.0}, {"alpha", 8.0, 13.0}, {"beta", 13.0, 30.0},
            {"low_gamma", 30.0, 45.0}};
}

Tensor bandpass(const Tensor& x, double lo_hz, double hi_hz, double rate_hz) {
    if (x.ndim() != 2) throw std::invalid_argument("bandpass: expected [T x d]");
    check_band(lo_hz, hi_hz, rate_hz, "bandpass");
    const size_t T = x.shape[0], d = x.shape[1];
    auto h = design_bandpass(lo_hz, hi_hz, rate_hz, T);
    Tensor out({T, d});
    parallel_for(d, [&](size_t c) {
        std::vector<double> col(T);
        for (size_t t = 0; t < T; ++t) col[t] = x.at(t, c);
        // symmetric kernel: forward-backward application equals two centered
        // passes and stays zero-phase
        col = conv_same_reflect(conv_same_reflect(col, h), h);
        for (size_t t = 0; t < T; ++t) out.at(t, c) = col[t];
    });
    return out;
}

Tensor average_reference(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("average_reference: expected [T x d]");
    const size_t T = x.shape[0], d = x.shape[1];
    if (d < 2) throw std::invalid_argument("average_reference: needs at least 2 channels");
    Tensor out({T, d});
    for (size_t t = 0; t < T; ++t) {
        double m = 0.0;
        for (size_t c = 0; c < d; ++c) m += x.at(t, c);
        m /= static_cast<double>(d);
        for (size_t c = 0; c < d; ++c) out.at(t, c) = x.at(t, c) - m;
    }
    return out;
}

Tensor baseline_correct(const Tensor& x, size_t marker, double pre_window_ms, double rate_hz) {
    if (x.ndim() != 2) throw std::invalid_argument("baseline_correct: expected [T x d]");
    const size_t T = x.shape[0], d = x.shape[1];
    const size_t pre = ms_to_samples(pre_window_ms, rate_hz);
    if (pre == 0 || pre > marker || marker > T)
        throw std::invalid_argument("baseline_correct: pre-stimulus window of " +
                                    std::to_string(pre) + " samples does not fit before marker " +
                                    std::to_string(marker));
    Tensor out({T, d});
    for (size_t c = 0; c < d; ++c) {
        double m = 0.0;
        for (size_t t = marker - pre; t < marker; ++t) m += x.at(t, c);
        m /= static_cast<double>(pre);
        for (size_t t = 0; t < T; ++t) out.at(t, c) = x.at(t, c) - m;
    }
    return out;
}

Tensor band_power_hilbert(const Tensor& x, const BandDef& band, double rate_hz) {
    if (x.ndim() != 2) throw std::invalid_argument("band_power_hilbert: expected [T x d]");
    const size_t T = x.shape[0], d = x.shape[1];
    if (T < 8) throw std::invalid_argument("band_power_hilbert: needs at least 8 samples");
    Tensor filtered = bandpass(x, band.lo_hz, band.hi_hz, rate_hz);
    Tensor power({T, d});
    for (size_t c = 0; c < d; ++c) {
        std::vector<std::complex<double>> a(T);
        for (size_t t = 0; t < T; ++t) a[t] = {filtered.at(t, c), 0.0};
        fft(a, false);
        // analytic signal: double positive frequencies, zero negatives,
        // keep DC (and Nyquist for even lengths) untouched
        const size_t half = T / 2;
        for (size_t k = 1; k < (T + 1) / 2; ++k) a[k] *= 2.0;
        for (size_t k = half + 1; k < T; ++k) a[k] = {0.0, 0.0};
        fft(a, true);
        for (size_t t = 0; t < T; ++t) power.at(t, c) = std::norm(a[t]);
    }
    return power;
}

std::vector<double> erd_ers(const Tensor& power, size_t marker, double base_ms, double active_ms,
                            double rate_hz) {
    if (power.ndim() != 2) throw std::invalid_argument("erd_ers: expected [T x d]");
    const size_t T = power.shape[0], d = power.shape[1];
    const size_t base = ms_to_samples(base_ms, rate_hz);
    const size_t active = ms_to_samples(active_ms, rate_hz);
    if (base == 0 || base > marker)
        throw std::invalid_argument("erd_ers: baseline window does not fit before the marker");
    if (marker + active > T)
        throw std::invalid_argument("erd_ers: active window exceeds the trial");
    std::vector<double> out(d);
    for (size_t c = 0; c < d; ++c) {
        double mb = 0.0, ma = 0.0;
        for (size_t t = marker - base; t < marker; ++t) mb += power.at(t, c);
        mb /= static_cast<double>(base);
        for (size_t t = marker; t < marker + active; ++t) ma += power.at(t, c);
        ma /= static_cast<double>(active);
        if (mb <= 0.0)
            throw std::invalid_argument("erd_ers: zero baseline power in channel " +
                                        std::to_string(c));
        out[c] = 100.0 * (ma - mb) / mb;
    }
    return out;
}

WelchResult welch_stats(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("welch_stats: each group needs at least 2 samples");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    auto var = [](const std::vector<double>& v, double m) {
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s / (static_cast<double>(v.size()) - 1.0);
    };
    const double ma = mean(a), mb = mean(b);
    const double va = var(a, ma), vb = var(b, mb);
    if (va == 0.0 && vb == 0.0)
        throw std::invalid_argument("welch_stats: zero variance in both groups");
    WelchResult r;
    const double sa = va / na, sb = vb / nb;
    const double se = std::sqrt(sa + sb);
    r.t = (ma - mb) / se;
    const double df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    r.p = student_t_two_sided_p(r.t, df);
    const double pooled =
        std::sqrt(((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0));
    r.cohens_d = pooled > 0.0 ? (ma - mb) / pooled : 0.0;
    return r;
}

std::vector<size_t> rank_channels(const std::vector<Tensor>& condition_erps, size_t marker,
                                  double window_lo_ms, double window_hi_ms, double rate_hz) {
    if (condition_erps.empty()) return {};
    const size_t T = condition_erps[0].shape[0], d = condition_erps[0].shape[1];
    const size_t lo = marker + ms_to_samples(window_lo_ms, rate_hz);
    const size_t hi = std::min(T, marker + ms_to_samples(window_hi_ms, rate_hz));
    if (lo >= hi) throw std::invalid_argument("rank_channels: empty post-stimulus window");
    std::vector<double> score(d, 0.0);
    for (const auto& erp : condition_erps) {
        if (erp.shape != condition_erps[0].shape)
            throw std::invalid_argument("rank_channels: condition ERPs must share a shape");
        for (size_t c = 0; c < d; ++c) {
            double m = 0.0;
            for (size_t t = lo; t < hi; ++t) m += erp.at(t, c);
            score[c] += std::fabs(m / static_cast<double>(hi - lo));
        }
    }
    std::vector<size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
        if (score[x] != score[y]) return score[x] > score[y];
        return x < y;
    });
    return order;
}

std::vector<size_t> artifact_keep_mask(const TrialSet& ts, double threshold_uv) {
    std::vector<size_t> keep;
    const size_t stride = ts.n_samples() * ts.n_channels();
    for (size_t i = 0; i < ts.n_trials(); ++i) {
        bool ok = true;
        for (size_t j = i * stride; j < (i + 1) * stride && ok; ++j)
            if (std::fabs(ts.data.data[j]) > threshold_uv) ok = false;
        if (ok) keep.push_back(i);
    }
    return keep;
}

TrialSet select_trials(const TrialSet& ts, const std::vector<size_t>& keep) {
    TrialSet out;
    out.rate_hz = ts.rate_hz;
    out.channel_names = ts.channel_names;
    out.data = Tensor({keep.size(), ts.n_samples(), ts.n_channels()});
    const size_t stride = ts.n_samples() * ts.n_channels();
    for (size_t k = 0; k < keep.size(); ++k) {
        std::copy(ts.data.data.begin() + keep[k] * stride,
                  ts.data.data.begin() + (keep[k] + 1) * stride,
                  out.data.data.begin() + k * stride);
        out.labels.push_back(ts.labels[keep[k]]);
        out.marker.push_back(ts.marker[keep[k]]);
    }
    return out;
}

TrialSet preprocess(const TrialSet& ts, const PrepOptions& opt) {
    ts.validate();
    TrialSet kept = select_trials(ts, artifact_keep_mask(ts, opt.artifact_threshold_uv));
    parallel_for(kept.n_trials(), [&](size_t i) {
        Tensor trial = kept.trial(i);
        trial = bandpass(trial, opt.band_lo_hz, opt.band_hi_hz, kept.rate_hz);
        trial = baseline_correct(trial, kept.marker[i], opt.baseline_ms, kept.rate_hz);
        if (opt.reference_average && kept.n_channels() >= 2) trial = average_reference(trial);
        kept.set_trial(i, trial);
    });
    return kept;
}

Tensor condition_erp(const TrialSet& ts, const std::string& label) {
    const size_t T = ts.n_samples(), d = ts.n_channels();
    Tensor erp({T, d});
    size_t n = 0;
    for (size_t i = 0; i < ts.n_trials(); ++i) {
        if (ts.labels[i] != label) continue;
        ++n;
        for (size_t t = 0; t < T; ++t)
            for (size_t c = 0; c < d; ++c) erp.at(t, c) += ts.data.at(i, t, c);
    }
    if (n == 0) throw std::invalid_argument("condition_erp: no trials labeled '" + label + "'");
    for (auto& v : erp.data) v /= static_cast<double>(n);
    return erp;
}

}  // namespace decode
