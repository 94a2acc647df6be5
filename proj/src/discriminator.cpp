#include "hpalf/discriminator.hpp"

#include <cmath>

#include "hpalf/fft.hpp"

namespace hpalf {

namespace {
const int kWidthBase[8] = {64, 128, 256, 512, 512, 512, 512, 512};
}

void DiscriminatorConfig::validate() const {
  require(outcomes >= 2, ErrorCode::config, "DiscriminatorConfig: outcomes must be >= 2");
  require(width_multiplier > 0.0 && width_multiplier <= 1.0, ErrorCode::config,
          "DiscriminatorConfig: width_multiplier must lie in (0,1]");
  require(is_power_of_two(image_size) && image_size >= 16, ErrorCode::config,
          "DiscriminatorConfig: image size incompatible with downsampling depth (need a power "
          "of two >= 16)");
  require(bottleneck_extent == 4, ErrorCode::config,
          "DiscriminatorConfig: bottleneck extent is fixed at 4");
}

int DiscriminatorConfig::stages() const { return log2_int(image_size) - 2; }

std::vector<int> DiscriminatorConfig::encoder_widths() const {
  std::vector<int> w(stages() - 1);
  for (int i = 0; i < stages() - 1; ++i)
    w[i] = ceil_scaled(kWidthBase[std::min(i, 7)], width_multiplier);
  return w;
}

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& config) : config_(config) {
  config_.validate();
  const std::vector<int> ew = config_.encoder_widths();
  const int n = config_.stages();
  const int K = config_.outcomes;

  int ch = 1;
  for (int i = 0; i < n; ++i) {
    const int out_ch = i + 1 < n ? ew[i] : K;  // bottleneck channels = K
    enc_.emplace_back("d.enc" + std::to_string(i), ch, out_ch, 4, 2, 1);
    enc_bn_.emplace_back("d.enc" + std::to_string(i) + ".bn", out_ch);
    ch = out_ch;
  }

  const int flat = K * config_.bottleneck_extent * config_.bottleneck_extent;
  const int d1 = std::max(4, ceil_scaled(128, config_.width_multiplier));
  const int d2 = std::max(4, ceil_scaled(64, config_.width_multiplier));
  fc1_ = DenseLayer<T>("d.fc1", flat, d1);
  fc2_ = DenseLayer<T>("d.fc2", d1, d2);
  fc3_ = DenseLayer<T>("d.fc3", d2, 1);

  // decoder mirrors the encoder widths back up to full resolution
  std::vector<int> dw;
  for (int i = static_cast<int>(ew.size()) - 1; i >= 0; --i) dw.push_back(ew[i]);
  dw.push_back(ew.empty() ? K : ew[0]);
  int in_ch = K;
  for (int i = 0; i < n; ++i) {
    // skip features join every stage except the bottleneck itself
    const int concat_in = i == 0 ? in_ch : in_ch + ew[n - 1 - i];
    dec_.emplace_back("d.dec" + std::to_string(i), concat_in, dw[i], 4, 2, 1);
    dec_bn_.emplace_back("d.dec" + std::to_string(i) + ".bn", dw[i]);
    in_ch = dw[i];
  }
  head_ = Conv2dLayer<T>("d.head", dw[n - 1], 1, 3, 1, 1);
}

template <typename T>
DiscEncodeResult<T> Discriminator<T>::encode(Tape<T>& t, int image, BatchNormMode mode) {
  const Shape s = t.shape(image);
  require(s.size() == 4 && s[0] == 1 && s[1] == 1, ErrorCode::dimension,
          "Discriminator: image must be (1,1,H,W)");
  require(s[2] == config_.image_size && s[3] == config_.image_size, ErrorCode::config,
          "Discriminator: image size " + std::to_string(s[2]) +
              " incompatible with configured " + std::to_string(config_.image_size));
  DiscEncodeResult<T> out;
  int h = image;
  const int n = config_.stages();
  for (int i = 0; i < n; ++i) {
    h = t.leaky_relu(enc_bn_[i].apply(t, enc_[i].apply(t, h), mode), T(0.2));
    out.skips.push_back(h);
  }
  out.bottleneck = h;  // (1,K,4,4)

  // scalar head: three dense layers after the bottleneck, sigmoid of the mean
  const int flat =
      config_.outcomes * config_.bottleneck_extent * config_.bottleneck_extent;
  int f = t.reshape(h, {1, flat});
  f = t.leaky_relu(fc1_.apply(t, f), T(0.2));
  f = t.leaky_relu(fc2_.apply(t, f), T(0.2));
  out.scalar = t.sigmoid(t.mean(fc3_.apply(t, f)));

  // perspective head: global sum pooling to a K-vector, softmax
  out.perspective = t.softmax(t.pool_global_sum(h));
  return out;
}

template <typename T>
int Discriminator<T>::decode(Tape<T>& t, const DiscEncodeResult<T>& enc, BatchNormMode mode) {
  require(enc.bottleneck >= 0 && !enc.skips.empty(), ErrorCode::contract,
          "Discriminator::decode: encode result required");
  const int n = config_.stages();
  int h = enc.bottleneck;
  for (int i = 0; i < n; ++i) {
    int in = i == 0 ? h : t.concat(std::vector<int>{h, enc.skips[n - 1 - i]}, 1);
    h = t.leaky_relu(dec_bn_[i].apply(t, dec_[i].apply(t, in), mode), T(0.2));
  }
  return t.sigmoid(head_.apply(t, h));
}

template <typename T>
DiscOutput<T> Discriminator<T>::forward(Tape<T>& t, int image, bool with_decoder,
                                        BatchNormMode mode) {
  DiscEncodeResult<T> enc = encode(t, image, mode);
  DiscOutput<T> out;
  out.scalar = enc.scalar;
  out.perspective = enc.perspective;
  if (with_decoder) out.pixel_map = decode(t, enc, mode);
  return out;
}

template <typename T>
void Discriminator<T>::init(Rng& rng) {
  for (auto& l : enc_) l.init(rng);
  fc1_.init(rng);
  fc2_.init(rng);
  fc3_.init(rng);
  for (auto& l : dec_) l.init(rng);
  head_.init(rng);
}

template <typename T>
std::vector<ParamTensor<T>*> Discriminator<T>::params() {
  std::vector<ParamTensor<T>*> out;
  for (size_t i = 0; i < enc_.size(); ++i) {
    enc_[i].collect(out);
    enc_bn_[i].collect(out);
  }
  fc1_.collect(out);
  fc2_.collect(out);
  fc3_.collect(out);
  for (size_t i = 0; i < dec_.size(); ++i) {
    dec_[i].collect(out);
    dec_bn_[i].collect(out);
  }
  head_.collect(out);
  return out;
}

template <typename T>
int64_t Discriminator<T>::parameter_count() {
  int64_t n = 0;
  for (const ParamTensor<T>* p : params())
    if (p->requires_grad) n += p->size();
  return n;
}

template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace hpalf
