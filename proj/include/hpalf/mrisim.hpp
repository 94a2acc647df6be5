#ifndef HPALF_MRISIM_HPP
#define HPALF_MRISIM_HPP

#include <string>
#include <vector>

#include "hpalf/common.hpp"
#include "hpalf/fft.hpp"

namespace hpalf {

/// Stack of square 2D slices, the unit of ingestion and phantom generation.
/// Normalized volumes keep every voxel in [-1, 1].
struct SliceVolume {
  int depth = 0;
  int height = 0;
  int width = 0;
  std::vector<double> voxels;      // (D,H,W) row-major
  double intensity_min = 0.0;      // range before normalization
  double intensity_max = 0.0;

  SliceVolume() = default;
  SliceVolume(int d, int h, int w)
      : depth(d), height(h), width(w), voxels(static_cast<size_t>(d) * h * w, 0.0) {}

  double* slice(int z) { return voxels.data() + static_cast<size_t>(z) * height * width; }
  const double* slice(int z) const {
    return voxels.data() + static_cast<size_t>(z) * height * width;
  }
  std::vector<double> slice_copy(int z) const {
    return std::vector<double>(slice(z), slice(z) + static_cast<size_t>(height) * width);
  }
};

// Maps voxel intensities onto [-1,1], recording the original range. A flat
// volume maps to all -1.
void normalize_volume(SliceVolume& v);

enum class MaskKind { g1d, g2d, p2d };

MaskKind mask_kind_from_string(const std::string& s);
std::string mask_kind_name(MaskKind kind);

struct MaskSpec {
  MaskKind kind = MaskKind::g1d;
  double fraction = 0.3;  // in (0,1]
  uint64_t seed = 0;
};

struct Mask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> keep;  // 1 = sampled

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_), keep(static_cast<size_t>(h_) * w_, 0) {}
  uint8_t& at(int y, int x) { return keep[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return keep[static_cast<size_t>(y) * w + x]; }
  int64_t count() const;
};

/// G1D: whole columns drawn without replacement, probability proportional to a
/// Gaussian centered on the DC column (sigma = W/6); the DC column is always
/// kept. G2D: points from a 2D Gaussian (sigma = extent/6), DC kept. P2D:
/// variable-density Poisson disc by dart throwing, radius r0*(1 + 2*d/d_max),
/// r0 tuned so the realized fraction matches. Counts round half up.
Mask make_mask(const MaskSpec& spec, int h, int w);

struct KSpaceSample {
  ComplexImage spectrum;  // masked k-space, unsampled bins exactly zero
  Mask mask;
  double noise_sigma = 0.0;  // fraction of the peak spectrum magnitude
  uint64_t seed = 0;
};

struct DegradeResult {
  KSpaceSample kspace;
  std::vector<double> zero_filled;  // real part of ifft2c(spectrum)
};

/// y = mask .* (fft2c(Re*(x)) + eps); zero-fill x_u = Re(ifft2c(y)).
/// Complex Gaussian noise has std noise_sigma * max|fft2c(x)| per component.
DegradeResult degrade(const std::vector<double>& slice, int h, int w, const Mask& mask,
                      double noise_sigma, uint64_t seed);

/// Drifting-ellipse phantom: 5..12 ellipses whose centers/axes move smoothly
/// along the slice axis, plus fine texture bands; normalized to [-1,1].
SliceVolume gen_phantom_volume(int depth, int height, int width, int complexity, uint64_t seed);

struct SliceWindow {
  int start = 0;     // first slice index
  int n_slices = 0;  // window length
};

/// Sliding windows of n_slices consecutive slices. Windows touching a slice
/// whose background fraction exceeds void_threshold are dropped.
std::vector<SliceWindow> prepare_sequences(const SliceVolume& volume, int n_slices,
                                           double void_threshold = 0.9);

// --- file formats -------------------------------------------------------------

// Volume container: 32-byte header (magic "HPVOL1\0\0", u32 D,H,W little
// endian, 12 reserved zero bytes) followed by float32 LE voxels (D,H,W).
void save_volume(const SliceVolume& v, const std::string& path);
SliceVolume load_volume(const std::string& path);

// 8-bit binary PGM; values mapped from [lo,hi] to 0..255.
void save_pgm(const std::vector<double>& image, int h, int w, double lo, double hi,
              const std::string& path);
void save_mask_pgm(const Mask& mask, const std::string& path);

}  // namespace hpalf

#endif  // HPALF_MRISIM_HPP
