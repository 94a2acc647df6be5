#include "hpalf/objectives.hpp"

#include <cmath>

namespace hpalf {

AnchorDistribution build_anchor(int outcomes, int skew_sign, double shape_param) {
  require(outcomes >= 2, ErrorCode::config, "build_anchor: need at least 2 outcomes");
  require(shape_param > 0.0, ErrorCode::config, "build_anchor: shape_param must be positive");
  require(skew_sign == 1 || skew_sign == -1, ErrorCode::config,
          "build_anchor: skew_sign must be +1 or -1");
  const double alpha = skew_sign * shape_param;
  AnchorDistribution a;
  a.skew_sign = skew_sign;
  a.probs.resize(outcomes);
  const double step = 6.0 / outcomes;
  double sum = 0.0;
  for (int k = 0; k < outcomes; ++k) {
    const double x = -3.0 + (k + 0.5) * step;
    const double pdf = std::exp(-0.5 * x * x);                        // unnormalized phi
    const double cdf = 0.5 * std::erfc(-alpha * x / std::sqrt(2.0));  // Phi(alpha x)
    a.probs[k] = 2.0 * pdf * cdf;
    sum += a.probs[k];
  }
  for (double& p : a.probs) p /= sum;
  return a;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  require(p.size() == q.size(), ErrorCode::dimension, "kl_divergence: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= 0.0, ErrorCode::config, "kl_divergence: negative probability in p");
    if (p[i] == 0.0) continue;
    require(q[i] > 0.0, ErrorCode::divergence,
            "kl_divergence: zero q entry with nonzero p mass");
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

LossConvention convention_from_string(const std::string& s) {
  if (s == "verbatim") return LossConvention::verbatim;
  if (s == "realness") return LossConvention::realness;
  throw Error(ErrorCode::config,
              "unknown loss convention '" + s + "' (expected verbatim|realness)");
}

namespace {

template <typename T>
int log_clamped(Tape<T>& t, int x) {
  return t.log(t.clamp(x, static_cast<T>(kProbEps), static_cast<T>(1.0 - kProbEps)));
}

// -log(s), s scalar node
template <typename T>
int nll_of(Tape<T>& t, int s) {
  return t.affine(log_clamped(t, s), T(-1), T(0));
}

// -log(1 - s)
template <typename T>
int nll_of_complement(Tape<T>& t, int s) {
  return t.affine(log_clamped(t, t.affine(s, T(-1), T(1))), T(-1), T(0));
}

template <typename T>
bool values_in_unit_interval(const Tape<T>& t, int id) {
  for (T v : t.value(id))
    if (static_cast<double>(v) <= kProbEps || static_cast<double>(v) >= 1.0 - kProbEps)
      return false;
  return true;
}

}  // namespace

template <typename T>
int kl_to_anchor(Tape<T>& t, const AnchorDistribution& anchor, int perspective) {
  const Shape s = t.shape(perspective);
  require(!s.empty() && s.back() == anchor.outcomes(), ErrorCode::dimension,
          "kl_to_anchor: perspective length does not match anchor outcomes");
  require(numel(s) == anchor.outcomes(), ErrorCode::dimension,
          "kl_to_anchor: one perspective row expected");
  std::vector<T> probs(anchor.probs.begin(), anchor.probs.end());
  double entropy_part = 0.0;  // sum p ln p
  for (double p : anchor.probs) entropy_part += p * std::log(p);
  int c = t.constant(s, std::move(probs));
  int cross = t.sum(t.mul(c, t.log(t.clamp(perspective, static_cast<T>(1e-12), T(1)))));
  return t.affine(cross, T(-1), static_cast<T>(entropy_part));
}

template <typename T>
int loss_d_enc(Tape<T>& t, int real_scalar, int real_perspective, int fake_scalar,
               int fake_perspective, const AnchorDistribution& r1, const AnchorDistribution& r0,
               LossConvention convention) {
  int kl_real = kl_to_anchor(t, r1, real_perspective);
  int kl_fake = kl_to_anchor(t, r0, fake_perspective);
  int log_real = log_clamped(t, real_scalar);                         // log D(x)
  int log_fake = log_clamped(t, t.affine(fake_scalar, T(-1), T(1)));  // log(1-D(G))
  if (convention == LossConvention::verbatim) {
    // -(KL(R1||D(x)) + log D(x)) - (KL(R0||D(G)) + log(1-D(G)))
    int s = t.add(t.add(kl_real, log_real), t.add(kl_fake, log_fake));
    return t.affine(s, T(-1), T(0));
  }
  // KL(R1||D(x)) - log D(x) + KL(R0||D(G)) - log(1-D(G))
  return t.add(t.sub(kl_real, log_real), t.sub(kl_fake, log_fake));
}

template <typename T>
DecLoss loss_d_dec(Tape<T>& t, int real_map, int fake_map) {
  require(t.shape(real_map) == t.shape(fake_map), ErrorCode::dimension,
          "loss_d_dec: map shapes differ");
  DecLoss out;
  out.clamped = !values_in_unit_interval(t, real_map) || !values_in_unit_interval(t, fake_map);
  int real_term = t.mean(log_clamped(t, real_map));
  int fake_term = t.mean(log_clamped(t, t.affine(fake_map, T(-1), T(1))));
  out.node = t.affine(t.add(real_term, fake_term), T(-1), T(0));
  return out;
}

template <typename T>
int loss_adv_g(Tape<T>& t, int fake_scalar, int fake_perspective, int fake_map,
               const AnchorDistribution& r1, const AnchorDistribution& r0,
               LossConvention convention) {
  int enc_part;
  if (convention == LossConvention::verbatim) {
    // -(KL(R0||D(G)) + log(1-D(G)))
    int kl_fake = kl_to_anchor(t, r0, fake_perspective);
    int log_fake = log_clamped(t, t.affine(fake_scalar, T(-1), T(1)));
    enc_part = t.affine(t.add(kl_fake, log_fake), T(-1), T(0));
  } else {
    // KL(R1||D(G)) - log D(G): pull the perspective to the real anchor
    int kl_real = kl_to_anchor(t, r1, fake_perspective);
    enc_part = t.add(kl_real, nll_of(t, fake_scalar));
  }
  if (fake_map < 0) return enc_part;
  return t.add(enc_part, loss_g_pixel(t, fake_map));
}

template <typename T>
std::pair<int, int> loss_tal(Tape<T>& t, int real_scalar, int fake_scalar) {
  int d = t.add(nll_of(t, real_scalar), nll_of_complement(t, fake_scalar));
  int g = nll_of(t, fake_scalar);
  return {d, g};
}

template <typename T>
int loss_g_pixel(Tape<T>& t, int fake_map) {
  return t.affine(t.mean(log_clamped(t, fake_map)), T(-1), T(0));
}

// --- surrogate extractor ---------------------------------------------------------

template <typename T>
SurrogateExtractor<T>::SurrogateExtractor(uint64_t seed)
    : seed_(seed),
      w1_("phi.w1", {8, 1, 4, 4}, false),
      b1_("phi.b1", {8}, false),
      w2_("phi.w2", {16, 8, 4, 4}, false),
      b2_("phi.b2", {16}, false),
      w3_("phi.w3", {32, 16, 4, 4}, false),
      b3_("phi.b3", {32}, false) {
  Rng rng(seed ^ 0x9e11a55e5ULL);
  w1_.init_fan_in(rng, 1 * 16);
  b1_.init_fan_in(rng, 1 * 16);
  w2_.init_fan_in(rng, 8 * 16);
  b2_.init_fan_in(rng, 8 * 16);
  w3_.init_fan_in(rng, 16 * 16);
  b3_.init_fan_in(rng, 16 * 16);
}

template <typename T>
int SurrogateExtractor<T>::features(Tape<T>& t, int image) const {
  int h1 = t.leaky_relu(t.conv2d(image, t.leaf(w1_), t.leaf(b1_), 2, 1), T(0.2));
  int h2 = t.leaky_relu(t.conv2d(h1, t.leaf(w2_), t.leaf(b2_), 2, 1), T(0.2));
  return t.leaky_relu(t.conv2d(h2, t.leaf(w3_), t.leaf(b3_), 2, 1), T(0.2));
}

template <typename T>
std::vector<ParamTensor<T>*> SurrogateExtractor<T>::params() {
  return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_};
}

template <typename T>
ContentLoss<T> loss_content(Tape<T>& t, int x_true, int x_rec,
                            const SurrogateExtractor<T>& phi) {
  require(t.shape(x_true) == t.shape(x_rec), ErrorCode::dimension,
          "loss_content: image shapes differ");
  ContentLoss<T> out;
  out.fmse = t.spectral_mse(x_true, x_rec);
  int ft = phi.features(t, x_true);
  int fr = phi.features(t, x_rec);
  int d = t.sub(ft, fr);
  out.vgg = t.affine(t.mean(t.mul(d, d)), T(0.5), T(0));
  return out;
}

template <typename T>
int loss_total(Tape<T>& t, int fmse, int vgg, int adv, const LossWeights& weights) {
  require(weights.alpha >= 0.0 && weights.beta >= 0.0, ErrorCode::config,
          "loss_total: weights must be nonnegative");
  int a = t.affine(fmse, static_cast<T>(weights.alpha), T(0));
  int b = t.affine(vgg, static_cast<T>(weights.beta), T(0));
  return t.add(t.add(a, b), adv);
}

#define HPALF_INSTANTIATE(T)                                                                   \
  template int kl_to_anchor<T>(Tape<T>&, const AnchorDistribution&, int);                     \
  template int loss_d_enc<T>(Tape<T>&, int, int, int, int, const AnchorDistribution&,         \
                             const AnchorDistribution&, LossConvention);                      \
  template DecLoss loss_d_dec<T>(Tape<T>&, int, int);                                         \
  template int loss_adv_g<T>(Tape<T>&, int, int, int, const AnchorDistribution&,             \
                             const AnchorDistribution&, LossConvention);                      \
  template std::pair<int, int> loss_tal<T>(Tape<T>&, int, int);                              \
  template int loss_g_pixel<T>(Tape<T>&, int);                                               \
  template class SurrogateExtractor<T>;                                                      \
  template ContentLoss<T> loss_content<T>(Tape<T>&, int, int, const SurrogateExtractor<T>&); \
  template int loss_total<T>(Tape<T>&, int, int, int, const LossWeights&);

HPALF_INSTANTIATE(float)
HPALF_INSTANTIATE(double)
#undef HPALF_INSTANTIATE

}  // namespace hpalf
