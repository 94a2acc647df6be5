#include "hpalf/fft.hpp"

#include <cmath>

namespace hpalf {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// In-place iterative radix-2 transform, no scaling. invert=true conjugates
// the twiddles (caller applies 1/n).
void fft1d(cplx* a, int n, bool invert) {
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / len * (invert ? 1.0 : -1.0);
    cplx wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        cplx u = a[i + k];
        cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

void transform2d(ComplexImage& img, bool invert) {
  const int h = img.h, w = img.w;
  for (int y = 0; y < h; ++y) fft1d(&img.data[static_cast<size_t>(y) * w], w, invert);
  std::vector<cplx> col(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[y] = img.at(y, x);
    fft1d(col.data(), h, invert);
    for (int y = 0; y < h; ++y) img.at(y, x) = col[y];
  }
}

// Circular shift by (h/2, w/2); for even extents shift and unshift coincide.
ComplexImage half_shift(const ComplexImage& img) {
  ComplexImage out(img.h, img.w);
  const int sy = img.h / 2, sx = img.w / 2;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) out.at((y + sy) % img.h, (x + sx) % img.w) = img.at(y, x);
  return out;
}

void check_extents(const ComplexImage& img) {
  require(is_power_of_two(img.h) && is_power_of_two(img.w), ErrorCode::config,
          "fft2c: extents must be powers of two, got " + std::to_string(img.h) + "x" +
              std::to_string(img.w));
  require(img.data.size() == static_cast<size_t>(img.h) * img.w, ErrorCode::dimension,
          "fft2c: data size does not match extents");
}

}  // namespace

ComplexImage fft2c(const ComplexImage& img) {
  check_extents(img);
  ComplexImage work = half_shift(img);
  transform2d(work, false);
  const double scale = 1.0 / std::sqrt(static_cast<double>(img.h) * img.w);
  for (auto& v : work.data) v *= scale;
  return half_shift(work);
}

ComplexImage ifft2c(const ComplexImage& img) {
  check_extents(img);
  ComplexImage work = half_shift(img);
  transform2d(work, true);
  const double scale = 1.0 / std::sqrt(static_cast<double>(img.h) * img.w);
  for (auto& v : work.data) v *= scale;
  return half_shift(work);
}

ComplexImage to_complex(const std::vector<double>& real, int h, int w) {
  require(real.size() == static_cast<size_t>(h) * w, ErrorCode::dimension,
          "to_complex: size mismatch");
  ComplexImage out(h, w);
  for (size_t i = 0; i < real.size(); ++i) out.data[i] = cplx(real[i], 0.0);
  return out;
}

std::vector<double> real_part(const ComplexImage& img) {
  std::vector<double> out(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) out[i] = img.data[i].real();
  return out;
}

}  // namespace hpalf
