#include "decode/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace decode {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

bool is_pow2(size_t n) { return n && (n & (n - 1)) == 0; }

size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Iterative Cooley-Tukey, n a power of two.
void fft_pow2(std::vector<std::complex<double>>& x, bool inverse) {
    const size_t n = x.size();
    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = x[i + k];
                std::complex<double> v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Bluestein chirp-z transform for arbitrary n.
void fft_bluestein(std::vector<std::complex<double>>& x, bool inverse) {
    const size_t n = x.size();
    const size_t m = next_pow2(2 * n + 1);
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<std::complex<double>> chirp(n);
    for (size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small for large n
        size_t k2 = (k * k) % (2 * n);
        double ang = sign * kPi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = std::complex<double>(std::cos(ang), std::sin(ang));
    }
    std::vector<std::complex<double>> a(m, {0.0, 0.0}), b(m, {0.0, 0.0});
    for (size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
    b[0] = std::conj(chirp[0]);
    for (size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
    fft_pow2(a, false);
    fft_pow2(b, false);
    for (size_t k = 0; k < m; ++k) a[k] *= b[k];
    fft_pow2(a, true);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (size_t k = 0; k < n; ++k) x[k] = a[k] * inv_m * chirp[k];
}

}  // namespace

void fft(std::vector<std::complex<double>>& x, bool inverse) {
    const size_t n = x.size();
    if (n == 0) throw std::invalid_argument("fft: empty input");
    if (n == 1) return;
    if (is_pow2(n))
        fft_pow2(x, inverse);
    else
        fft_bluestein(x, inverse);
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& v : x) v *= inv_n;
    }
}

void rfft(const std::vector<double>& x, std::vector<double>& re, std::vector<double>& im) {
    const size_t n = x.size();
    if (n == 0) throw std::invalid_argument("rfft: empty input");
    std::vector<std::complex<double>> c(n);
    for (size_t i = 0; i < n; ++i) c[i] = {x[i], 0.0};
    fft(c, false);
    const size_t f = n / 2 + 1;
    re.assign(f, 0.0);
    im.assign(f, 0.0);
    for (size_t k = 0; k < f; ++k) {
        re[k] = c[k].real();
        im[k] = c[k].imag();
    }
}

std::vector<double> irfft(const std::vector<double>& re, const std::vector<double>& im, size_t n) {
    const size_t f = n / 2 + 1;
    if (re.size() != f || im.size() != f)
        throw std::invalid_argument("irfft: expected " + std::to_string(f) + " bins for length " +
                                    std::to_string(n));
    std::vector<std::complex<double>> c(n);
    for (size_t k = 0; k < f; ++k) c[k] = {re[k], im[k]};
    for (size_t k = f; k < n; ++k) c[k] = std::conj(c[n - k]);
    fft(c, true);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = c[i].real();
    return out;
}

void rfft_cols(const Tensor& x, Tensor& re, Tensor& im) {
    if (x.ndim() != 2) throw std::invalid_argument("rfft_cols: expected 2-D " + shape_str(x.shape));
    const size_t T = x.shape[0], d = x.shape[1], F = T / 2 + 1;
    re = Tensor({F, d});
    im = Tensor({F, d});
    std::vector<double> col(T), cre, cim;
    for (size_t j = 0; j < d; ++j) {
        for (size_t t = 0; t < T; ++t) col[t] = x.at(t, j);
        rfft(col, cre, cim);
        for (size_t k = 0; k < F; ++k) {
            re.at(k, j) = cre[k];
            im.at(k, j) = cim[k];
        }
    }
}

Tensor irfft_cols(const Tensor& re, const Tensor& im, size_t T) {
    const size_t F = T / 2 + 1;
    if (re.ndim() != 2 || !re.same_shape(im) || re.shape[0] != F)
        throw std::invalid_argument("irfft_cols: bin shape " + shape_str(re.shape) +
                                    " incompatible with length " + std::to_string(T));
    const size_t d = re.shape[1];
    Tensor out({T, d});
    std::vector<double> cre(F), cim(F);
    for (size_t j = 0; j < d; ++j) {
        for (size_t k = 0; k < F; ++k) {
            cre[k] = re.at(k, j);
            cim[k] = im.at(k, j);
        }
        auto col = irfft(cre, cim, T);
        for (size_t t = 0; t < T; ++t) out.at(t, j) = col[t];
    }
    return out;
}

}  // namespace decode
