#ifndef HPALF_FFT_HPP
#define HPALF_FFT_HPP

#include <complex>
#include <vector>

#include "hpalf/common.hpp"

namespace hpalf {

using cplx = std::complex<double>;

struct ComplexImage {
  int h = 0;
  int w = 0;
  std::vector<cplx> data;

  ComplexImage() = default;
  ComplexImage(int h_, int w_) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_) {}

  cplx& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
  const cplx& at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
};

bool is_power_of_two(int n);

/// Centered orthonormal 2D DFT: DC ends up at (h/2, w/2) and
/// ||fft2c(x)||_2 == ||x||_2. Extents must be powers of two.
ComplexImage fft2c(const ComplexImage& img);
ComplexImage ifft2c(const ComplexImage& img);

ComplexImage to_complex(const std::vector<double>& real, int h, int w);
std::vector<double> real_part(const ComplexImage& img);

}  // namespace hpalf

#endif  // HPALF_FFT_HPP
