#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace itnet {

struct Spectrum {
  std::vector<double> freq_hz;
  std::vector<double> magnitude;
};

// One-sided DFT magnitude of the kernel zero-padded to pad_to points, on the grid
// k*fs/pad_to for k = 0..pad_to/2. Direct summation: kernels are at most a few
// hundred taps, so an FFT buys nothing here.
inline Spectrum kernel_spectrum(const std::vector<double>& kernel, double fs, std::size_t pad_to) {
  if (kernel.size() < 2) throw std::invalid_argument("kernel_spectrum: kernel needs at least two taps");
  if (pad_to < kernel.size()) {
    throw std::invalid_argument("kernel_spectrum: pad_to (" + std::to_string(pad_to) + ") is shorter than the kernel (" +
                                std::to_string(kernel.size()) + ")");
  }
  if (!(fs > 0.0)) throw std::invalid_argument("kernel_spectrum: fs must be positive");
  Spectrum s;
  const std::size_t bins = pad_to / 2 + 1;
  s.freq_hz.resize(bins);
  s.magnitude.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < kernel.size(); ++t) {
      // Reduce k*t modulo pad_to first so the angle stays small and exact.
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % pad_to) / static_cast<double>(pad_to);
      acc += kernel[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    s.freq_hz[k] = static_cast<double>(k) * fs / static_cast<double>(pad_to);
    s.magnitude[k] = std::abs(acc);
  }
  return s;
}

}  // namespace itnet
