#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hpalf/metrics.hpp"
#include "hpalf/mrisim.hpp"
#include "testutil.hpp"

using namespace hpalf;
using testutil::random_vec;

TEST_CASE("psnr oracle values") {
  // MSE = 0.01 at range 1 -> 20 dB
  std::vector<double> x(100, 0.5), y(100, 0.6);
  CHECK(psnr(x, y, 1.0) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(std::isinf(psnr(x, x, 1.0)));
  // affine rescaling with matching data_range leaves PSNR unchanged
  std::vector<double> x2(100), y2(100);
  for (int i = 0; i < 100; ++i) {
    x2[i] = 3.0 * x[i] + 1.0;
    y2[i] = 3.0 * y[i] + 1.0;
  }
  CHECK(psnr(x2, y2, 3.0) == doctest::Approx(psnr(x, y, 1.0)).epsilon(1e-12));
}

TEST_CASE("ssim identity, constants and symmetry") {
  Rng rng(3);
  std::vector<double> x = random_vec(rng, 32 * 32, 0.0, 1.0);
  CHECK(ssim(x, x, 32, 32) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> a(32 * 32, 0.2), b(32 * 32, 0.8);
  CHECK(ssim(a, b, 32, 32) == doctest::Approx(0.4707).epsilon(5e-4 / 0.4707));
  std::vector<double> y = random_vec(rng, 32 * 32, 0.0, 1.0);
  CHECK(ssim(x, y, 32, 32) == doctest::Approx(ssim(y, x, 32, 32)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(std::vector<double>(64, 0.0), std::vector<double>(64, 0.0), 8, 8), Error);
}

TEST_CASE("psnr and ssim match an independent literal-formula oracle") {
  // separately coded plain-loop oracle, no shared helpers
  auto psnr_oracle = [](const std::vector<double>& a, const std::vector<double>& b) {
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= a.size();
    return 10.0 * std::log10(1.0 / mse);
  };
  auto ssim_oracle = [](const std::vector<double>& a, const std::vector<double>& b, int h,
                        int w) {
    double g[11][11], gn = 0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        g[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / 4.5);
        gn += g[i][j];
      }
    double total = 0;
    int cnt = 0;
    for (int oy = 0; oy + 11 <= h; ++oy)
      for (int ox = 0; ox + 11 <= w; ++ox) {
        double ma = 0, mb = 0, va = 0, vb = 0, vab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            ma += g[i][j] / gn * a[(oy + i) * w + ox + j];
            mb += g[i][j] / gn * b[(oy + i) * w + ox + j];
          }
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double da = a[(oy + i) * w + ox + j] - ma;
            const double db = b[(oy + i) * w + ox + j] - mb;
            va += g[i][j] / gn * da * da;
            vb += g[i][j] / gn * db * db;
            vab += g[i][j] / gn * da * db;
          }
        total += ((2 * ma * mb + 1e-4) * (2 * vab + 9e-4)) /
                 ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
        ++cnt;
      }
    return total / cnt;
  };
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a = random_vec(rng, 16 * 16, 0.0, 1.0);
    std::vector<double> b = random_vec(rng, 16 * 16, 0.0, 1.0);
    CHECK(std::abs(psnr(a, b, 1.0) - psnr_oracle(a, b)) < 1e-9);
    CHECK(std::abs(ssim(a, b, 16, 16) - ssim_oracle(a, b, 16, 16)) < 1e-9);
  }
}

TEST_CASE("ffd identity and symmetry") {
  SurrogateExtractor<double> phi(5);
  Rng rng(7);
  std::vector<std::vector<double>> set_a;
  for (int i = 0; i < 6; ++i) set_a.push_back(random_vec(rng, 32 * 32));
  FfdResult same = ffd(set_a, set_a, 32, 32, phi);
  CHECK(std::abs(same.value) < 1e-6);
  std::vector<std::vector<double>> set_b;
  for (int i = 0; i < 6; ++i) set_b.push_back(random_vec(rng, 32 * 32));
  FfdResult ab = ffd(set_a, set_b, 32, 32, phi);
  FfdResult ba = ffd(set_b, set_a, 32, 32, phi);
  CHECK(std::abs(ab.value - ba.value) < 1e-9);
}

TEST_CASE("ffd mean-shift sampling oracle") {
  // two Gaussian clouds, equal covariance, means differing by delta:
  // FFD ~= ||delta||^2 within 5% at 1e4 samples
  Rng rng(13);
  const int d = 32;
  std::vector<double> delta(d);
  double d2 = 0.0;
  for (int i = 0; i < d; ++i) {
    delta[i] = rng.uniform(-1.0, 1.0);
    d2 += delta[i] * delta[i];
  }
  std::vector<std::vector<double>> fa, fb;
  for (int s = 0; s < 10000; ++s) {
    std::vector<double> a(d), b(d);
    for (int i = 0; i < d; ++i) {
      a[i] = rng.gaussian();
      b[i] = rng.gaussian() + delta[i];
    }
    fa.push_back(std::move(a));
    fb.push_back(std::move(b));
  }
  FfdResult r = frechet_distance(fa, fb);
  CHECK(std::abs(r.value - d2) < 0.05 * d2);
}

TEST_CASE("psim_lite identity, zero-gradient form, offset invariance") {
  Rng rng(17);
  std::vector<double> x = random_vec(rng, 24 * 24, 0.0, 1.0);
  CHECK(psim_lite(x, x, 24, 24) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> flat(24 * 24, 0.4);
  // against a constant image the score is mean of c/(g^2+c)
  auto grad_mag = [&](const std::vector<double>& img, int i, int j) {
    auto at = [&](int y, int xx) { return img[y * 24 + xx]; };
    const double gx = (at(i - 1, j + 1) + 2 * at(i, j + 1) + at(i + 1, j + 1)) -
                      (at(i - 1, j - 1) + 2 * at(i, j - 1) + at(i + 1, j - 1));
    const double gy = (at(i + 1, j - 1) + 2 * at(i + 1, j) + at(i + 1, j + 1)) -
                      (at(i - 1, j - 1) + 2 * at(i - 1, j) + at(i - 1, j + 1));
    return std::sqrt(gx * gx + gy * gy);
  };
  double expect = 0.0;
  int cnt = 0;
  for (int i = 1; i < 23; ++i)
    for (int j = 1; j < 23; ++j) {
      const double g = grad_mag(x, i, j);
      expect += 1e-4 / (g * g + 1e-4);
      ++cnt;
    }
  expect /= cnt;
  CHECK(psim_lite(x, flat, 24, 24) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(psim_lite(x, flat, 24, 24) < 1.0);

  std::vector<double> xo(x.size()), yo(x.size());
  std::vector<double> y = random_vec(rng, 24 * 24, 0.0, 1.0);
  for (size_t i = 0; i < x.size(); ++i) {
    xo[i] = x[i] + 0.3;
    yo[i] = y[i] + 0.3;
  }
  CHECK(psim_lite(xo, yo, 24, 24) == doctest::Approx(psim_lite(x, y, 24, 24)).epsilon(1e-12));
}

TEST_CASE("noise estimator recovers injected sigma on flat images") {
  for (double sigma : {0.05, 0.10, 0.20}) {
    double worst_rel = 0.0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(1000 * static_cast<uint64_t>(sigma * 100) + seed);
      std::vector<double> img(96 * 96, 0.5);
      for (double& v : img) v += sigma * rng.gaussian();
      NoiseEstimate est = estimate_noise_level(img, 96, 96);
      worst_rel = std::max(worst_rel, std::abs(est.sigma - sigma) / sigma);
    }
    CHECK(worst_rel < 0.20);
  }
}

TEST_CASE("noise estimator degenerate and monotone behaviour") {
  std::vector<double> flat(64 * 64, 0.5);
  CHECK(estimate_noise_level(flat, 64, 64).sigma < 0.005);
  double prev = -1.0;
  for (double sigma : {0.05, 0.10, 0.20}) {
    double mean = 0.0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(7000 + seed);
      std::vector<double> img(64 * 64, 0.5);
      for (double& v : img) v += sigma * rng.gaussian();
      mean += estimate_noise_level(img, 64, 64).sigma;
    }
    mean /= 5;
    CHECK(mean > prev);
    prev = mean;
  }
  CHECK_THROWS_AS(estimate_noise_level(std::vector<double>(16 * 16, 0.0), 16, 16), Error);
}

TEST_CASE("cosine diversity oracles") {
  std::vector<double> a = {1, 0, 0, 2};
  std::vector<double> minus_a = {-1, 0, 0, -2};
  CHECK(feature_cosine_diversity({a, a}).mean_cosine == doctest::Approx(1.0));
  std::vector<double> e1 = {1, 0, 0, 0}, e2 = {0, 1, 0, 0};
  CHECK(feature_cosine_diversity({e1, e2}).mean_cosine == doctest::Approx(0.0));
  CHECK(feature_cosine_diversity({a, a, minus_a}).mean_cosine ==
        doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
  std::vector<double> zero(4, 0.0);
  CosineDiversity cd = feature_cosine_diversity({a, minus_a, zero});
  CHECK(cd.excluded_maps == 1);
  CHECK(cd.mean_cosine == doctest::Approx(-1.0));
}

TEST_CASE("volume evaluation writes the CSV with the mapping header") {
  namespace fs = std::filesystem;
  SurrogateExtractor<double> phi(3);
  SliceVolume v = gen_phantom_volume(8, 32, 32, 8, 5);
  std::vector<std::vector<double>> ref, rec;
  Rng rng(9);
  for (int z = 0; z < 8; ++z) {
    ref.push_back(v.slice_copy(z));
    std::vector<double> noisy = v.slice_copy(z);
    for (double& x : noisy) x = std::clamp(x + 0.05 * rng.gaussian(), -1.0, 1.0);
    rec.push_back(std::move(noisy));
  }
  MetricReport rep = evaluate_volumes(ref, rec, 32, 32, phi);
  CHECK(rep.slices.size() == 8);
  CHECK(rep.psnr > 10.0);
  CHECK(rep.ssim < 1.0);
  CHECK(rep.ffd >= 0.0);

  const std::string path = (fs::temp_directory_path() / "hpalf_metrics_test.csv").string();
  write_metric_csv(rep, path);
  std::ifstream f(path);
  std::string first, second;
  std::getline(f, first);
  std::getline(f, second);
  CHECK(first.find("intensity_mapping=[-1,1]->[0,1]") != std::string::npos);
  CHECK(second == "slice,psnr,ssim,psim_lite,noise_sigma,ffd");
  int rows = 0;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 9);  // 8 slices + summary
  std::remove(path.c_str());
}

TEST_CASE("jacobi eigensolver sanity") {
  // 3x3 with known spectrum
  std::vector<double> m = {2, 1, 0, 1, 2, 0, 0, 0, 5};
  std::vector<double> eig, vec;
  symmetric_eigen(m, 3, &eig, &vec);
  CHECK(eig[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(eig[1] == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(eig[2] == doctest::Approx(5.0).epsilon(1e-10));
}
