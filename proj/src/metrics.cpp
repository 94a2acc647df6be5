#include "hpalf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "hpalf/tensor.hpp"

namespace hpalf {

std::vector<double> to_unit_range(const std::vector<double>& img) {
  std::vector<double> out(img.size());
  for (size_t i = 0; i < img.size(); ++i) out[i] = (img[i] + 1.0) / 2.0;
  return out;
}

double psnr(const std::vector<double>& x, const std::vector<double>& y, double data_range) {
  require(x.size() == y.size() && !x.empty(), ErrorCode::dimension, "psnr: size mismatch");
  require(data_range > 0.0, ErrorCode::config, "psnr: data_range must be positive");
  double mse = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const std::vector<double>& x, const std::vector<double>& y, int h, int w) {
  require(x.size() == static_cast<size_t>(h) * w && y.size() == x.size(), ErrorCode::dimension,
          "ssim: size mismatch");
  constexpr int kWin = 11;
  require(h >= kWin && w >= kWin, ErrorCode::config,
          "ssim: image smaller than the 11x11 window");
  constexpr double kC1 = 1e-4;   // (K1*L)^2, K1=0.01, L=1
  constexpr double kC2 = 9e-4;   // (K2*L)^2, K2=0.03

  double win[kWin][kWin];
  double norm = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - 5.0, dx = j - 5.0;
      win[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
      norm += win[i][j];
    }
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) win[i][j] /= norm;

  double acc = 0.0;
  int count = 0;
  for (int oy = 0; oy + kWin <= h; ++oy) {
    for (int ox = 0; ox + kWin <= w; ++ox) {
      double mx = 0, my = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const size_t idx = static_cast<size_t>(oy + i) * w + ox + j;
          mx += win[i][j] * x[idx];
          my += win[i][j] * y[idx];
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const size_t idx = static_cast<size_t>(oy + i) * w + ox + j;
          const double dx = x[idx] - mx, dy = y[idx] - my;
          vx += win[i][j] * dx * dx;
          vy += win[i][j] * dy * dy;
          cxy += win[i][j] * dx * dy;
        }
      acc += ((2 * mx * my + kC1) * (2 * cxy + kC2)) /
             ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      ++count;
    }
  }
  return acc / count;
}

// --- symmetric eigensolver (cyclic Jacobi) -----------------------------------------

void symmetric_eigen(const std::vector<double>& matrix, int n, std::vector<double>* eigenvalues,
                     std::vector<double>* eigenvectors) {
  require(matrix.size() == static_cast<size_t>(n) * n, ErrorCode::dimension,
          "symmetric_eigen: size mismatch");
  std::vector<double> a = matrix;
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

  auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(at(i, i)));
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off <= 1e-26 * std::max(1.0, scale * scale)) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[static_cast<size_t>(k) * n + p];
          const double vkq = v[static_cast<size_t>(k) * n + q];
          v[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
          v[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return at(i, i) < at(j, j); });
  eigenvalues->resize(n);
  if (eigenvectors) eigenvectors->assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    (*eigenvalues)[i] = at(order[i], order[i]);
    if (eigenvectors)
      for (int k = 0; k < n; ++k)
        (*eigenvectors)[static_cast<size_t>(k) * n + i] = v[static_cast<size_t>(k) * n + order[i]];
  }
}

// --- Frechet feature distance -------------------------------------------------------

namespace {

void mean_cov(const std::vector<std::vector<double>>& feats, std::vector<double>* mu,
              std::vector<double>* cov) {
  const int n = static_cast<int>(feats.size());
  const int d = static_cast<int>(feats[0].size());
  mu->assign(d, 0.0);
  for (const auto& f : feats)
    for (int i = 0; i < d; ++i) (*mu)[i] += f[i];
  for (int i = 0; i < d; ++i) (*mu)[i] /= n;
  cov->assign(static_cast<size_t>(d) * d, 0.0);
  if (n < 2) return;
  for (const auto& f : feats)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        (*cov)[static_cast<size_t>(i) * d + j] += (f[i] - (*mu)[i]) * (f[j] - (*mu)[j]);
  for (double& c : *cov) c /= (n - 1);
}

// B^{1/2} A B^{1/2} trace-sqrt via two symmetric eigendecompositions
double trace_sqrt_product(const std::vector<double>& a, const std::vector<double>& b, int d) {
  std::vector<double> eb, vb;
  symmetric_eigen(b, d, &eb, &vb);
  // B^{1/2} = V diag(sqrt(max(e,0))) V^T
  std::vector<double> bs(static_cast<size_t>(d) * d, 0.0);
  for (int k = 0; k < d; ++k) {
    const double s = std::sqrt(std::max(0.0, eb[k]));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        bs[static_cast<size_t>(i) * d + j] +=
            s * vb[static_cast<size_t>(i) * d + k] * vb[static_cast<size_t>(j) * d + k];
  }
  // T = bs * a * bs
  std::vector<double> tmp(static_cast<size_t>(d) * d, 0.0), tmat(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double f = bs[static_cast<size_t>(i) * d + k];
      if (f == 0.0) continue;
      for (int j = 0; j < d; ++j) tmp[static_cast<size_t>(i) * d + j] += f * a[static_cast<size_t>(k) * d + j];
    }
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double f = tmp[static_cast<size_t>(i) * d + k];
      if (f == 0.0) continue;
      for (int j = 0; j < d; ++j) tmat[static_cast<size_t>(i) * d + j] += f * bs[static_cast<size_t>(k) * d + j];
    }
  // symmetrize against rounding
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double m = 0.5 * (tmat[static_cast<size_t>(i) * d + j] + tmat[static_cast<size_t>(j) * d + i]);
      tmat[static_cast<size_t>(i) * d + j] = m;
      tmat[static_cast<size_t>(j) * d + i] = m;
    }
  std::vector<double> et;
  symmetric_eigen(tmat, d, &et, nullptr);
  double tr = 0.0;
  for (double e : et) tr += std::sqrt(std::max(0.0, e));
  return tr;
}

}  // namespace

FfdResult frechet_distance(const std::vector<std::vector<double>>& feats_a,
                           const std::vector<std::vector<double>>& feats_b) {
  require(!feats_a.empty() && !feats_b.empty(), ErrorCode::dimension,
          "frechet_distance: empty feature set");
  const int d = static_cast<int>(feats_a[0].size());
  require(static_cast<int>(feats_b[0].size()) == d, ErrorCode::dimension,
          "frechet_distance: feature dimension mismatch");
  std::vector<double> mu_a, mu_b, cov_a, cov_b;
  mean_cov(feats_a, &mu_a, &cov_a);
  mean_cov(feats_b, &mu_b, &cov_b);

  FfdResult out;
  std::vector<double> ea, eb;
  symmetric_eigen(cov_a, d, &ea, nullptr);
  symmetric_eigen(cov_b, d, &eb, nullptr);
  const double tr_scale = std::max({1.0, std::abs(ea.back()), std::abs(eb.back())});
  if (ea.front() < 1e-10 * tr_scale || eb.front() < 1e-10 * tr_scale) {
    out.loaded_covariance = true;
    for (int i = 0; i < d; ++i) {
      cov_a[static_cast<size_t>(i) * d + i] += 1e-6;
      cov_b[static_cast<size_t>(i) * d + i] += 1e-6;
    }
  }
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) mean_term += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
  double tr_a = 0.0, tr_b = 0.0;
  for (int i = 0; i < d; ++i) {
    tr_a += cov_a[static_cast<size_t>(i) * d + i];
    tr_b += cov_b[static_cast<size_t>(i) * d + i];
  }
  out.value = mean_term + tr_a + tr_b - 2.0 * trace_sqrt_product(cov_a, cov_b, d);
  return out;
}

namespace {

std::vector<double> surrogate_features_gap(const std::vector<std::vector<double>>& images,
                                           int h, int w, const SurrogateExtractor<double>& phi,
                                           std::vector<std::vector<double>>* out) {
  out->clear();
  for (const auto& img : images) {
    require(img.size() == static_cast<size_t>(h) * w, ErrorCode::dimension,
            "ffd: image size mismatch");
    TapeD t;
    int x = t.input({1, 1, h, w}, img);
    int f = phi.features(t, x);
    const Shape fs = t.shape(f);
    const int C = fs[1];
    const int64_t plane = static_cast<int64_t>(fs[2]) * fs[3];
    std::vector<double> vec(C, 0.0);
    auto vals = t.value(f);
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) acc += vals[c * plane + i];
      vec[c] = acc / static_cast<double>(plane);
    }
    out->push_back(std::move(vec));
  }
  return {};
}

}  // namespace

FfdResult ffd(const std::vector<std::vector<double>>& set_a,
              const std::vector<std::vector<double>>& set_b, int h, int w,
              const SurrogateExtractor<double>& phi) {
  std::vector<std::vector<double>> fa, fb;
  surrogate_features_gap(set_a, h, w, phi, &fa);
  surrogate_features_gap(set_b, h, w, phi, &fb);
  return frechet_distance(fa, fb);
}

double psim_lite(const std::vector<double>& x, const std::vector<double>& y, int h, int w) {
  require(x.size() == static_cast<size_t>(h) * w && y.size() == x.size(), ErrorCode::dimension,
          "psim_lite: size mismatch");
  require(h >= 3 && w >= 3, ErrorCode::config, "psim_lite: image too small for Sobel");
  constexpr double kC = 1e-4;
  auto grad_mag = [&](const std::vector<double>& img, int yy, int xx) {
    auto at = [&](int i, int j) { return img[static_cast<size_t>(i) * w + j]; };
    const double gx = (at(yy - 1, xx + 1) + 2 * at(yy, xx + 1) + at(yy + 1, xx + 1)) -
                      (at(yy - 1, xx - 1) + 2 * at(yy, xx - 1) + at(yy + 1, xx - 1));
    const double gy = (at(yy + 1, xx - 1) + 2 * at(yy + 1, xx) + at(yy + 1, xx + 1)) -
                      (at(yy - 1, xx - 1) + 2 * at(yy - 1, xx) + at(yy - 1, xx + 1));
    return std::sqrt(gx * gx + gy * gy);
  };
  double acc = 0.0;
  int count = 0;
  for (int i = 1; i + 1 < h; ++i)
    for (int j = 1; j + 1 < w; ++j) {
      const double ga = grad_mag(x, i, j);
      const double gb = grad_mag(y, i, j);
      acc += (2.0 * ga * gb + kC) / (ga * ga + gb * gb + kC);
      ++count;
    }
  return acc / count;
}

NoiseEstimate estimate_noise_level(const std::vector<double>& image, int h, int w) {
  require(image.size() == static_cast<size_t>(h) * w, ErrorCode::dimension,
          "estimate_noise_level: size mismatch");
  require(h >= 32 && w >= 32, ErrorCode::config, "estimate_noise_level: image must be >= 32x32");
  constexpr int kP = 7;   // patch extent
  constexpr int kD = kP * kP;
  const int ny = h - kP + 1, nx = w - kP + 1;
  const int n_patches = ny * nx;

  // texture strength: largest eigenvalue of the 2x2 gradient covariance over
  // the patch interior (central differences, 5x5 samples)
  std::vector<double> strength(n_patches);
  for (int py = 0; py < ny; ++py)
    for (int px = 0; px < nx; ++px) {
      double sxx = 0, syy = 0, sxy = 0;
      for (int i = 1; i + 1 < kP; ++i)
        for (int j = 1; j + 1 < kP; ++j) {
          const int yy = py + i, xx = px + j;
          const double gx =
              0.5 * (image[static_cast<size_t>(yy) * w + xx + 1] -
                     image[static_cast<size_t>(yy) * w + xx - 1]);
          const double gy =
              0.5 * (image[static_cast<size_t>(yy + 1) * w + xx] -
                     image[static_cast<size_t>(yy - 1) * w + xx]);
          sxx += gx * gx;
          syy += gy * gy;
          sxy += gx * gy;
        }
      const int m = (kP - 2) * (kP - 2);
      sxx /= m;
      syy /= m;
      sxy /= m;
      const double tr = sxx + syy, det = sxx * syy - sxy * sxy;
      strength[static_cast<size_t>(py) * nx + px] =
          0.5 * tr + std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
    }

  auto sigma_from = [&](const std::vector<int>& selected) {
    std::vector<double> mean(kD, 0.0);
    for (int idx : selected) {
      const int py = idx / nx, px = idx % nx;
      for (int i = 0; i < kP; ++i)
        for (int j = 0; j < kP; ++j)
          mean[i * kP + j] += image[static_cast<size_t>(py + i) * w + px + j];
    }
    for (double& v : mean) v /= selected.size();
    std::vector<double> cov(static_cast<size_t>(kD) * kD, 0.0);
    std::vector<double> patch(kD);
    for (int idx : selected) {
      const int py = idx / nx, px = idx % nx;
      for (int i = 0; i < kP; ++i)
        for (int j = 0; j < kP; ++j)
          patch[i * kP + j] = image[static_cast<size_t>(py + i) * w + px + j] - mean[i * kP + j];
      for (int i = 0; i < kD; ++i)
        for (int j = i; j < kD; ++j) cov[static_cast<size_t>(i) * kD + j] += patch[i] * patch[j];
    }
    for (int i = 0; i < kD; ++i)
      for (int j = i; j < kD; ++j) {
        const double v = cov[static_cast<size_t>(i) * kD + j] / selected.size();
        cov[static_cast<size_t>(i) * kD + j] = v;
        cov[static_cast<size_t>(j) * kD + i] = v;
      }
    std::vector<double> eig;
    symmetric_eigen(cov, kD, &eig, nullptr);
    return std::max(0.0, eig.front());
  };

  NoiseEstimate out;
  std::vector<int> all(n_patches);
  for (int i = 0; i < n_patches; ++i) all[i] = i;
  double var = sigma_from(all);
  std::vector<int> selected = all;
  for (int iter = 0; iter < 10; ++iter) {
    out.iterations = iter + 1;
    // pure-noise gradient energy per axis is var/2; the factor covers the
    // sampling spread of the largest eigenvalue
    const double threshold = 1.0 * var;
    std::vector<int> next;
    for (int i = 0; i < n_patches; ++i)
      if (strength[i] <= threshold) next.push_back(i);
    if (next.size() < 50) {
      out.low_confidence = true;
      if (next.empty()) next = all;
    }
    const double new_var = sigma_from(next);
    selected.swap(next);
    if (std::abs(std::sqrt(new_var) - std::sqrt(var)) < 1e-6) {
      var = new_var;
      break;
    }
    var = new_var;
  }
  out.selected_patches = static_cast<int>(selected.size());
  out.low_confidence = out.low_confidence || out.selected_patches < 50;
  out.sigma = std::sqrt(var);
  return out;
}

CosineDiversity feature_cosine_diversity(const std::vector<std::vector<double>>& maps) {
  require(maps.size() >= 2, ErrorCode::dimension,
          "feature_cosine_diversity: need at least two maps");
  const size_t len = maps[0].size();
  std::vector<const std::vector<double>*> usable;
  std::vector<double> norms;
  CosineDiversity out;
  for (const auto& m : maps) {
    require(m.size() == len, ErrorCode::dimension, "feature_cosine_diversity: shape mismatch");
    double n2 = 0.0;
    for (double v : m) n2 += v * v;
    if (n2 <= 0.0) {
      ++out.excluded_maps;
      continue;
    }
    usable.push_back(&m);
    norms.push_back(std::sqrt(n2));
  }
  require(usable.size() >= 2, ErrorCode::dimension,
          "feature_cosine_diversity: fewer than two nonzero maps");
  double acc = 0.0;
  int pairs = 0;
  for (size_t i = 0; i < usable.size(); ++i)
    for (size_t j = i + 1; j < usable.size(); ++j) {
      double dot = 0.0;
      for (size_t k = 0; k < len; ++k) dot += (*usable[i])[k] * (*usable[j])[k];
      acc += dot / (norms[i] * norms[j]);
      ++pairs;
    }
  out.mean_cosine = acc / pairs;
  return out;
}

MetricReport evaluate_volumes(const std::vector<std::vector<double>>& reference,
                              const std::vector<std::vector<double>>& reconstruction, int h,
                              int w, const SurrogateExtractor<double>& phi) {
  require(reference.size() == reconstruction.size() && !reference.empty(), ErrorCode::dimension,
          "evaluate_volumes: slice count mismatch");
  MetricReport rep;
  double psnr_acc = 0.0, ssim_acc = 0.0, psim_acc = 0.0;
  for (size_t z = 0; z < reference.size(); ++z) {
    const std::vector<double> a = to_unit_range(reference[z]);
    const std::vector<double> b = to_unit_range(reconstruction[z]);
    SliceMetrics m;
    m.slice = static_cast<int>(z);
    m.psnr = psnr(a, b, 1.0);
    m.ssim = ssim(a, b, h, w);
    m.psim_lite = psim_lite(a, b, h, w);
    m.noise_sigma = estimate_noise_level(b, h, w).sigma;
    psnr_acc += m.psnr;
    ssim_acc += m.ssim;
    psim_acc += m.psim_lite;
    rep.slices.push_back(m);
  }
  const double n = static_cast<double>(reference.size());
  rep.psnr = psnr_acc / n;
  rep.ssim = ssim_acc / n;
  rep.psim_lite = psim_acc / n;
  rep.ffd = ffd(reference, reconstruction, h, w, phi).value;
  return rep;
}

void write_metric_csv(const MetricReport& report, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), ErrorCode::io, "write_metric_csv: cannot open '" + path + "'");
  f << "# intensity_mapping=[-1,1]->[0,1] data_range=1\n";
  f << "slice,psnr,ssim,psim_lite,noise_sigma,ffd\n";
  char line[256];
  for (const SliceMetrics& m : report.slices) {
    if (std::isinf(m.psnr)) {
      std::snprintf(line, sizeof(line), "%d,inf,%.6f,%.6f,%.6f,\n", m.slice, m.ssim,
                    m.psim_lite, m.noise_sigma);
    } else {
      std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f,\n", m.slice, m.psnr, m.ssim,
                    m.psim_lite, m.noise_sigma);
    }
    f << line;
  }
  if (std::isinf(report.psnr)) {
    std::snprintf(line, sizeof(line), "summary,inf,%.6f,%.6f,,%.6f\n", report.ssim,
                  report.psim_lite, report.ffd);
  } else {
    std::snprintf(line, sizeof(line), "summary,%.6f,%.6f,%.6f,,%.6f\n", report.psnr, report.ssim,
                  report.psim_lite, report.ffd);
  }
  f << line;
  require(f.good(), ErrorCode::io, "write_metric_csv: write failed");
}

}  // namespace hpalf
