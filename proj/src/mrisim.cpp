#include "hpalf/mrisim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace hpalf {

namespace {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// Point mirror about the centered DC bin: index 0 (Nyquist) and the DC bin
// map to themselves.
inline int mirror_index(int i, int n) { return (n - i) % n; }

}  // namespace

int64_t Mask::count() const {
  int64_t c = 0;
  for (uint8_t v : keep) c += v;
  return c;
}

void normalize_volume(SliceVolume& v) {
  require(!v.voxels.empty(), ErrorCode::dimension, "normalize_volume: empty volume");
  double lo = v.voxels[0], hi = v.voxels[0];
  for (double x : v.voxels) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  v.intensity_min = lo;
  v.intensity_max = hi;
  if (hi > lo) {
    const double s = 2.0 / (hi - lo);
    for (double& x : v.voxels) x = s * (x - lo) - 1.0;
  } else {
    for (double& x : v.voxels) x = -1.0;
  }
}

MaskKind mask_kind_from_string(const std::string& s) {
  if (s == "g1d") return MaskKind::g1d;
  if (s == "g2d") return MaskKind::g2d;
  if (s == "p2d") return MaskKind::p2d;
  throw Error(ErrorCode::config, "unknown mask kind '" + s + "' (expected g1d|g2d|p2d)");
}

std::string mask_kind_name(MaskKind kind) {
  switch (kind) {
    case MaskKind::g1d: return "g1d";
    case MaskKind::g2d: return "g2d";
    case MaskKind::p2d: return "p2d";
  }
  return "?";
}

namespace {

// Weighted sampling without replacement via the exponential race: the n
// smallest -ln(u)/w keys win. Deterministic under the caller's rng.
std::vector<int> weighted_draw(Rng& rng, const std::vector<double>& weights, int n) {
  std::vector<std::pair<double, int>> keys;
  keys.reserve(weights.size());
  for (size_t i = 0; i < weights.size(); ++i) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    keys.emplace_back(-std::log(u) / weights[i], static_cast<int>(i));
  }
  std::sort(keys.begin(), keys.end());
  std::vector<int> out;
  out.reserve(n);
  for (int i = 0; i < n && i < static_cast<int>(keys.size()); ++i)
    out.push_back(keys[i].second);
  return out;
}

void mask_g1d(Mask& m, double fraction, Rng& rng) {
  const int w = m.w;
  const int dc = w / 2;
  int target = std::min(w, std::max(1, round_half_up(fraction * w)));
  std::vector<uint8_t> cols(w, 0);
  cols[dc] = 1;
  int placed = 1;
  const int nyq = 0;
  if (placed < target && (target - placed) % 2 == 1 && nyq != dc) {
    cols[nyq] = 1;
    ++placed;
  }
  // column pairs (x, W-x), Gaussian weight, sigma = W/6
  const double sigma = static_cast<double>(w) / 6.0;
  std::vector<int> reps;
  std::vector<double> wts;
  for (int x = 1; x < dc; ++x) {
    reps.push_back(x);
    const double d = static_cast<double>(x - dc);
    wts.push_back(std::exp(-0.5 * d * d / (sigma * sigma)));
  }
  const int pairs = (target - placed) / 2;
  for (int idx : weighted_draw(rng, wts, pairs)) {
    cols[reps[idx]] = 1;
    cols[mirror_index(reps[idx], w)] = 1;
  }
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = cols[x];
}

void mask_g2d(Mask& m, double fraction, Rng& rng) {
  const int h = m.h, w = m.w;
  const int total = h * w;
  int target = std::min(total, std::max(1, round_half_up(fraction * total)));
  m.at(h / 2, w / 2) = 1;
  int placed = 1;
  if (placed < target && (target - placed) % 2 == 1) {
    m.at(0, 0) = 1;  // self-mirror bin fixes parity
    ++placed;
  }
  const double sy = static_cast<double>(h) / 6.0;
  const double sx = static_cast<double>(w) / 6.0;
  std::vector<std::pair<int, int>> reps;
  std::vector<double> wts;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int my = mirror_index(y, h), mx = mirror_index(x, w);
      if (std::make_pair(y, x) >= std::make_pair(my, mx)) continue;  // one rep per pair
      if (m.at(y, x) || m.at(my, mx)) continue;
      const double dy = static_cast<double>(y - h / 2);
      const double dx = static_cast<double>(x - w / 2);
      reps.emplace_back(y, x);
      wts.push_back(std::exp(-0.5 * (dy * dy / (sy * sy) + dx * dx / (sx * sx))));
    }
  const int pairs = (target - placed) / 2;
  for (int idx : weighted_draw(rng, wts, pairs)) {
    auto [y, x] = reps[idx];
    m.at(y, x) = 1;
    m.at(mirror_index(y, h), mirror_index(x, w)) = 1;
  }
}

void mask_p2d(Mask& m, double fraction, Rng& rng) {
  const int h = m.h, w = m.w;
  const int total = h * w;
  const int target = std::min(total, std::max(1, round_half_up(fraction * total)));
  const double cy = h / 2.0, cx = w / 2.0;
  const double d_max = std::sqrt(cy * cy + cx * cx);

  // Initial radius from the uniform-density packing estimate, then shrink
  // whenever dart throwing stalls; exact-count termination.
  double r0 = std::sqrt(static_cast<double>(total) / (3.14159265358979 * target)) * 1.4;
  auto radius = [&](double y, double x) {
    const double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
    return r0 * (1.0 + 2.0 * d / d_max);
  };

  std::vector<std::pair<int, int>> accepted;
  int64_t placed = 0;
  auto place = [&](int y, int x) {
    m.at(y, x) = 1;
    accepted.emplace_back(y, x);
    ++placed;
  };
  place(h / 2, w / 2);
  if ((target - placed) % 2 == 1) place(0, 0);  // self-mirror bin fixes parity
  int fails = 0;
  // Mirror pairs are always placed together, so the mask stays point
  // symmetric and the count lands exactly on target.
  while (placed < target) {
    const int y = static_cast<int>(rng.uniform_index(h));
    const int x = static_cast<int>(rng.uniform_index(w));
    const int my = mirror_index(y, h), mx = mirror_index(x, w);
    if (m.at(y, x) || (my == y && mx == x)) {
      if (++fails > 300) {
        r0 *= 0.85;
        fails = 0;
      }
      continue;
    }
    const double rc = radius(y, x);
    bool ok = true;
    // scan window bounded by the largest possible pair spacing
    const int reach = static_cast<int>(std::ceil((rc + 3.0 * r0) * 0.5)) + 1;
    for (const auto& [ay, ax] : accepted) {
      if (std::abs(ay - y) > reach || std::abs(ax - x) > reach) continue;
      const double need = 0.5 * (rc + radius(ay, ax));
      const double dy = ay - y, dx = ax - x;
      if (dy * dy + dx * dx < need * need) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      if (++fails > 300) {
        r0 *= 0.85;
        fails = 0;
      }
      continue;
    }
    fails = 0;
    place(y, x);
    place(my, mx);
  }
}

}  // namespace

Mask make_mask(const MaskSpec& spec, int h, int w) {
  require(spec.fraction > 0.0 && spec.fraction <= 1.0, ErrorCode::config,
          "make_mask: fraction must lie in (0,1]");
  require(h >= 2 && w >= 2, ErrorCode::config, "make_mask: extents too small");
  Mask m(h, w);
  if (spec.fraction >= 1.0) {
    std::fill(m.keep.begin(), m.keep.end(), uint8_t(1));
    return m;
  }
  Rng rng(spec.seed ^ (0x517cc1b727220a95ULL * (static_cast<uint64_t>(spec.kind) + 1)));
  switch (spec.kind) {
    case MaskKind::g1d: mask_g1d(m, spec.fraction, rng); break;
    case MaskKind::g2d: mask_g2d(m, spec.fraction, rng); break;
    case MaskKind::p2d: mask_p2d(m, spec.fraction, rng); break;
  }
  return m;
}

DegradeResult degrade(const std::vector<double>& slice, int h, int w, const Mask& mask,
                      double noise_sigma, uint64_t seed) {
  require(mask.h == h && mask.w == w, ErrorCode::dimension,
          "degrade: mask shape does not match slice");
  require(noise_sigma >= 0.0, ErrorCode::config, "degrade: noise_sigma must be >= 0");
  ComplexImage spec = fft2c(to_complex(slice, h, w));
  if (noise_sigma > 0.0) {
    double peak = 0.0;
    for (const cplx& v : spec.data) peak = std::max(peak, std::abs(v));
    const double sigma = noise_sigma * peak;
    Rng rng(seed);
    for (cplx& v : spec.data) v += cplx(sigma * rng.gaussian(), sigma * rng.gaussian());
  }
  for (size_t i = 0; i < spec.data.size(); ++i)
    if (!mask.keep[i]) spec.data[i] = cplx(0.0, 0.0);

  DegradeResult out;
  out.zero_filled = real_part(ifft2c(spec));
  out.kspace.spectrum = std::move(spec);
  out.kspace.mask = mask;
  out.kspace.noise_sigma = noise_sigma;
  out.kspace.seed = seed;
  return out;
}

SliceVolume gen_phantom_volume(int depth, int height, int width, int complexity, uint64_t seed) {
  require(depth >= 7, ErrorCode::config, "gen_phantom_volume: depth must be >= 7");
  require(height == width && is_power_of_two(height), ErrorCode::config,
          "gen_phantom_volume: slices must be square with power-of-two extent");
  const int n_ell = std::clamp(complexity, 5, 12);

  struct Ellipse {
    double cx, cy, ax, ay, angle, intensity;
    double dcx, dcy, dax, day, dangle;  // drift amplitudes
    double fx, fy, pa;                  // drift frequencies / phases
    bool textured;
    double tex_freq, tex_angle, tex_phase;
  };
  Rng rng(seed);
  std::vector<Ellipse> ells(n_ell);
  for (int e = 0; e < n_ell; ++e) {
    Ellipse& el = ells[e];
    el.cx = rng.uniform(0.22, 0.78);
    el.cy = rng.uniform(0.22, 0.78);
    el.ax = rng.uniform(0.06, 0.30);
    el.ay = rng.uniform(0.06, 0.30);
    el.angle = rng.uniform(0.0, 3.14159265);
    el.intensity = rng.uniform(0.25, 1.0) * (e % 4 == 3 ? -0.6 : 1.0);
    el.dcx = rng.uniform(0.02, 0.08);
    el.dcy = rng.uniform(0.02, 0.08);
    el.dax = rng.uniform(0.01, 0.05);
    el.day = rng.uniform(0.01, 0.05);
    el.dangle = rng.uniform(0.05, 0.3);
    el.fx = rng.uniform(0.5, 1.5);
    el.fy = rng.uniform(0.5, 1.5);
    el.pa = rng.uniform(0.0, 6.28318);
    el.textured = (e % 3 == 1);
    el.tex_freq = rng.uniform(6.0, 14.0);
    el.tex_angle = rng.uniform(0.0, 3.14159265);
    el.tex_phase = rng.uniform(0.0, 6.28318);
  }

  SliceVolume v(depth, height, width);
  for (int z = 0; z < depth; ++z) {
    const double u = static_cast<double>(z) / static_cast<double>(depth - 1);
    double* sl = v.slice(z);
    for (const Ellipse& el : ells) {
      const double cx = el.cx + el.dcx * std::sin(6.28318 * el.fx * u + el.pa);
      const double cy = el.cy + el.dcy * std::sin(6.28318 * el.fy * u + 1.3 * el.pa);
      const double ax = std::max(0.03, el.ax + el.dax * std::sin(3.14159 * u + el.pa));
      const double ay = std::max(0.03, el.ay + el.day * std::cos(3.14159 * u + el.pa));
      const double th = el.angle + el.dangle * u;
      const double ct = std::cos(th), st = std::sin(th);
      for (int y = 0; y < height; ++y) {
        const double py = (y + 0.5) / height - cy;
        for (int x = 0; x < width; ++x) {
          const double px = (x + 0.5) / width - cx;
          const double rx = (ct * px + st * py) / ax;
          const double ry = (-st * px + ct * py) / ay;
          const double q = rx * rx + ry * ry;
          if (q >= 1.0) continue;
          double val = el.intensity * (1.0 - 0.3 * q);  // soft falloff inside
          if (el.textured) {
            const double tx = std::cos(el.tex_angle) * x + std::sin(el.tex_angle) * y;
            val *= 1.0 + 0.35 * std::sin(6.28318 * el.tex_freq * tx / width + el.tex_phase);
          }
          sl[static_cast<size_t>(y) * width + x] += val;
        }
      }
    }
  }
  normalize_volume(v);
  return v;
}

std::vector<SliceWindow> prepare_sequences(const SliceVolume& volume, int n_slices,
                                           double void_threshold) {
  require(n_slices >= 3 && n_slices <= 7, ErrorCode::config,
          "prepare_sequences: n_slices must lie in 3..7");
  require(volume.depth >= n_slices, ErrorCode::config,
          "prepare_sequences: volume depth " + std::to_string(volume.depth) + " < n_slices " +
              std::to_string(n_slices));
  const double background = *std::min_element(volume.voxels.begin(), volume.voxels.end());
  const int64_t plane = static_cast<int64_t>(volume.height) * volume.width;
  std::vector<bool> is_void(volume.depth);
  for (int z = 0; z < volume.depth; ++z) {
    const double* sl = volume.slice(z);
    int64_t n_bg = 0;
    for (int64_t i = 0; i < plane; ++i)
      if (std::abs(sl[i] - background) < 1e-12) ++n_bg;
    is_void[z] = static_cast<double>(n_bg) / static_cast<double>(plane) > void_threshold;
  }
  std::vector<SliceWindow> windows;
  for (int s = 0; s + n_slices <= volume.depth; ++s) {
    bool ok = true;
    for (int z = s; z < s + n_slices; ++z)
      if (is_void[z]) {
        ok = false;
        break;
      }
    if (ok) windows.push_back({s, n_slices});
  }
  return windows;
}

// --- file formats ---------------------------------------------------------------

namespace {
constexpr char kVolumeMagic[8] = {'H', 'P', 'V', 'O', 'L', '1', '\0', '\0'};
}

void save_volume(const SliceVolume& v, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "save_volume: cannot open '" + path + "'");
  f.write(kVolumeMagic, 8);
  const uint32_t dims[3] = {static_cast<uint32_t>(v.depth), static_cast<uint32_t>(v.height),
                            static_cast<uint32_t>(v.width)};
  f.write(reinterpret_cast<const char*>(dims), 12);
  const char zeros[12] = {0};
  f.write(zeros, 12);
  std::vector<float> data(v.voxels.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(v.voxels[i]);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  require(f.good(), ErrorCode::io, "save_volume: write failed for '" + path + "'");
}

SliceVolume load_volume(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "load_volume: cannot open '" + path + "'");
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::memcmp(magic, kVolumeMagic, 8) == 0, ErrorCode::io,
          "load_volume: bad magic in '" + path + "'");
  uint32_t dims[3];
  f.read(reinterpret_cast<char*>(dims), 12);
  char reserved[12];
  f.read(reserved, 12);
  require(f.good(), ErrorCode::io, "load_volume: truncated header in '" + path + "'");
  require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0 && dims[0] < (1u << 16) &&
              dims[1] < (1u << 16) && dims[2] < (1u << 16),
          ErrorCode::io, "load_volume: implausible extents in '" + path + "'");
  SliceVolume v(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                static_cast<int>(dims[2]));
  std::vector<float> data(v.voxels.size());
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size() * sizeof(float)));
  require(f.good(), ErrorCode::io, "load_volume: truncated voxel data in '" + path + "'");
  for (size_t i = 0; i < data.size(); ++i) v.voxels[i] = static_cast<double>(data[i]);
  double lo = v.voxels.empty() ? 0.0 : v.voxels[0], hi = lo;
  for (double x : v.voxels) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  v.intensity_min = lo;
  v.intensity_max = hi;
  return v;
}

void save_pgm(const std::vector<double>& image, int h, int w, double lo, double hi,
              const std::string& path) {
  require(image.size() == static_cast<size_t>(h) * w, ErrorCode::dimension,
          "save_pgm: size mismatch");
  require(hi > lo, ErrorCode::config, "save_pgm: empty intensity range");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "save_pgm: cannot open '" + path + "'");
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> bytes(image.size());
  for (size_t i = 0; i < image.size(); ++i) {
    double t = (image[i] - lo) / (hi - lo);
    t = std::min(1.0, std::max(0.0, t));
    bytes[i] = static_cast<uint8_t>(std::lround(t * 255.0));
  }
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorCode::io, "save_pgm: write failed for '" + path + "'");
}

void save_mask_pgm(const Mask& mask, const std::string& path) {
  std::vector<double> img(mask.keep.size());
  for (size_t i = 0; i < img.size(); ++i) img[i] = mask.keep[i] ? 1.0 : 0.0;
  save_pgm(img, mask.h, mask.w, 0.0, 1.0, path);
}

}  // namespace hpalf
