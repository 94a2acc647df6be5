#ifndef HPALF_OBJECTIVES_HPP
#define HPALF_OBJECTIVES_HPP

#include <utility>
#include <vector>

#include "hpalf/tensor.hpp"

namespace hpalf {

/// Fixed K-outcome distribution the discriminator's perspective is pulled
/// toward (R1 real / R0 fake). Entries are strictly positive so KL terms stay
/// finite.
struct AnchorDistribution {
  std::vector<double> probs;
  int skew_sign = +1;  // +1 -> R1 (real), -1 -> R0 (fake)

  int outcomes() const { return static_cast<int>(probs.size()); }
};

/// Discretized skew-normal (location 0, scale 1, shape skew_sign*shape_param)
/// on K equispaced bins over [-3,3], normalized.
AnchorDistribution build_anchor(int outcomes, int skew_sign, double shape_param = 4.0);

/// KL(p||q) in nats. q must be strictly positive wherever p is.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

/// Sign convention for the anchor losses. `verbatim` keeps the printed
/// equations; `realness` flips the KL signs so the minimizer sits at the
/// anchors (the training default).
enum class LossConvention { verbatim, realness };

LossConvention convention_from_string(const std::string& s);

struct LossWeights {
  double alpha = 15.0;            // frequency-domain MSE weight
  double beta = 0.1;              // surrogate perceptual weight
  double lambda_fidelity = 50.0;  // TV baseline only
};

// Probabilities are clamped to [kProbEps, 1-kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

// --- tape-side loss builders ---------------------------------------------------
// Scalars are single-element nodes in (0,1); perspectives are (1,K) rows of a
// softmax; maps are (1,1,H,W) sigmoid outputs. Each builder returns a scalar
// node. Expectations are over the single sample handed in; batch averaging is
// the trainer's job.

template <typename T>
int kl_to_anchor(Tape<T>& t, const AnchorDistribution& anchor, int perspective);

// Discriminator encoder loss over both heads.
template <typename T>
int loss_d_enc(Tape<T>& t, int real_scalar, int real_perspective, int fake_scalar,
               int fake_perspective, const AnchorDistribution& r1, const AnchorDistribution& r0,
               LossConvention convention);

struct DecLoss {
  int node = -1;
  bool clamped = false;  // some map value left (0,1) and hit the guard
};

// Per-pixel decoder loss, normalized by pixel count.
template <typename T>
DecLoss loss_d_dec(Tape<T>& t, int real_map, int fake_map);

// Adversarial generator loss; pass fake_map = -1 to drop the per-pixel term
// (GLC-off ablation).
template <typename T>
int loss_adv_g(Tape<T>& t, int fake_scalar, int fake_perspective, int fake_map,
               const AnchorDistribution& r1, const AnchorDistribution& r0,
               LossConvention convention);

// Traditional adversarial loss on the scalar head only (non-saturating G).
template <typename T>
std::pair<int, int> loss_tal(Tape<T>& t, int real_scalar, int fake_scalar);

// Pixel-decoder pull for G alone: -mean log D_dec(G).
template <typename T>
int loss_g_pixel(Tape<T>& t, int fake_map);

/// Frozen feature extractor standing in for the pretrained perceptual
/// network: three stride-2 conv stages (8/16/32 channels) with leaky-ReLU,
/// weights drawn once from `seed` and never trained.
template <typename T>
class SurrogateExtractor {
 public:
  explicit SurrogateExtractor(uint64_t seed);

  // (N,1,H,W) -> (N,32,H/8,W/8); gradients flow to the image only.
  int features(Tape<T>& t, int image) const;

  uint64_t seed() const { return seed_; }
  static constexpr int feature_channels = 32;
  std::vector<ParamTensor<T>*> params();

 private:
  uint64_t seed_;
  mutable ParamTensor<T> w1_, b1_, w2_, b2_, w3_, b3_;
};

template <typename T>
struct ContentLoss {
  int fmse = -1;
  int vgg = -1;
};

// x_true/x_rec: (N,1,H,W) in [-1,1].
template <typename T>
ContentLoss<T> loss_content(Tape<T>& t, int x_true, int x_rec,
                            const SurrogateExtractor<T>& phi);

// alpha * fmse + beta * vgg + adv
template <typename T>
int loss_total(Tape<T>& t, int fmse, int vgg, int adv, const LossWeights& weights);

}  // namespace hpalf

#endif  // HPALF_OBJECTIVES_HPP
