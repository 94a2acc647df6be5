#ifndef HPALF_METRICS_HPP
#define HPALF_METRICS_HPP

#include <string>
#include <vector>

#include "hpalf/common.hpp"
#include "hpalf/objectives.hpp"

namespace hpalf {

/// Metrics run on [0,1]-rescaled single-channel images; the caller maps
/// [-1,1] volumes with to_unit_range first.
std::vector<double> to_unit_range(const std::vector<double>& img);

/// 10*log10(range^2 / MSE); identical inputs give +infinity (the "inf"
/// sentinel in reports).
double psnr(const std::vector<double>& x, const std::vector<double>& y, double data_range = 1.0);

/// Windowed SSIM: 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
/// data range 1, mean over valid windows.
double ssim(const std::vector<double>& x, const std::vector<double>& y, int h, int w);

struct FfdResult {
  double value = 0.0;
  bool loaded_covariance = false;  // diagonal loading kicked in
};

/// Frechet distance between Gaussian fits of frozen surrogate features
/// (global average pooled 32-vectors). The FID substitute.
FfdResult ffd(const std::vector<std::vector<double>>& set_a,
              const std::vector<std::vector<double>>& set_b, int h, int w,
              const SurrogateExtractor<double>& phi);

/// Same Frechet form on caller-provided feature vectors (the sampling oracle
/// path in tests).
FfdResult frechet_distance(const std::vector<std::vector<double>>& feats_a,
                           const std::vector<std::vector<double>>& feats_b);

/// Gradient-magnitude similarity mean: (2 g_x g_y + c)/(g_x^2 + g_y^2 + c)
/// with Sobel magnitudes, c = 1e-4. The PSIM substitute, in [0,1].
double psim_lite(const std::vector<double>& x, const std::vector<double>& y, int h, int w);

struct NoiseEstimate {
  double sigma = 0.0;
  bool low_confidence = false;  // fewer than 50 weak-texture patches
  int iterations = 0;
  int selected_patches = 0;
};

/// Weak-texture patch PCA noise estimator: 7x7 patches, gradient-covariance
/// texture test with a threshold iterated to a fixed point (<= 10 rounds),
/// sigma from the smallest eigenvalue of the selected-patch covariance.
NoiseEstimate estimate_noise_level(const std::vector<double>& image, int h, int w);

/// Mean pairwise cosine similarity over flattened maps; zero-norm maps are
/// excluded and flagged.
struct CosineDiversity {
  double mean_cosine = 0.0;
  int excluded_maps = 0;
};
CosineDiversity feature_cosine_diversity(const std::vector<std::vector<double>>& maps);

struct SliceMetrics {
  int slice = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double psim_lite = 0.0;
  double noise_sigma = 0.0;
};

struct MetricReport {
  double psnr = 0.0;  // mean over slices; +inf when every slice is identical
  double ssim = 0.0;
  double ffd = 0.0;
  double psim_lite = 0.0;
  std::vector<SliceMetrics> slices;
};

/// Volume-level report: per-slice PSNR/SSIM/PSIM-lite/noise plus one FFD over
/// the slice sets. Inputs are [-1,1] volumes flattened per slice.
MetricReport evaluate_volumes(const std::vector<std::vector<double>>& reference,
                              const std::vector<std::vector<double>>& reconstruction, int h,
                              int w, const SurrogateExtractor<double>& phi);

void write_metric_csv(const MetricReport& report, const std::string& path);

// Symmetric Jacobi eigensolver, exposed for tests (ascending eigenvalues).
void symmetric_eigen(const std::vector<double>& matrix, int n, std::vector<double>* eigenvalues,
                     std::vector<double>* eigenvectors);

}  // namespace hpalf

#endif  // HPALF_METRICS_HPP
