#pragma once

#include <complex>
#include <vector>

#include "decode/tensor.hpp"

namespace decode {

// In-place complex DFT for arbitrary length (iterative radix-2 for powers of
// two, Bluestein otherwise). Forward is unnormalized; inverse divides by N.
void fft(std::vector<std::complex<double>>& x, bool inverse);

// Real FFT of a length-N vector: returns the N/2+1 non-redundant bins.
void rfft(const std::vector<double>& x, std::vector<double>& re, std::vector<double>& im);
// Inverse real FFT back to length n.
std::vector<double> irfft(const std::vector<double>& re, const std::vector<double>& im, size_t n);

// Column-wise (time axis 0) real FFT of a [T x d] tensor -> two [F x d]
// tensors with F = T/2 + 1.
void rfft_cols(const Tensor& x, Tensor& re, Tensor& im);
Tensor irfft_cols(const Tensor& re, const Tensor& im, size_t T);

}  // namespace decode
