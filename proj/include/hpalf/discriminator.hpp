#ifndef HPALF_DISCRIMINATOR_HPP
#define HPALF_DISCRIMINATOR_HPP

#include <string>
#include <vector>

#include "hpalf/layers.hpp"

namespace hpalf {

struct DiscriminatorConfig {
  int outcomes = 10;  // K; also the bottleneck channel count
  double width_multiplier = 1.0;
  int image_size = 256;  // power of two >= 16
  int bottleneck_extent = 4;

  void validate() const;
  int stages() const;                       // log2(image_size) - 2, bottleneck 4x4
  std::vector<int> encoder_widths() const;  // widths before the K-channel stage
};

/// Per-image output triple: overall realness, K-outcome perspective
/// distribution, per-pixel decision map.
template <typename T>
struct DiscOutput {
  int scalar = -1;       // single element in (0,1)
  int perspective = -1;  // (1,K), softmax row
  int pixel_map = -1;    // (1,1,H,W) in (0,1); -1 when the decoder is skipped
};

template <typename T>
struct DiscEncodeResult {
  int scalar = -1;
  int perspective = -1;
  int bottleneck = -1;      // (1,K,4,4)
  std::vector<int> skips;   // per-level encoder features
};

/// U-net discriminator: stride-2 encoder to a K x 4 x 4 bottleneck feeding a
/// three-dense-layer scalar head and a global-sum-pooled softmax perspective;
/// mirrored decoder with skip connections emits the per-pixel map.
template <typename T>
class Discriminator {
 public:
  explicit Discriminator(const DiscriminatorConfig& config);

  DiscEncodeResult<T> encode(Tape<T>& t, int image, BatchNormMode mode);
  int decode(Tape<T>& t, const DiscEncodeResult<T>& enc, BatchNormMode mode);
  DiscOutput<T> forward(Tape<T>& t, int image, bool with_decoder, BatchNormMode mode);

  void init(Rng& rng);
  std::vector<ParamTensor<T>*> params();
  int64_t parameter_count();

  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  std::vector<Conv2dLayer<T>> enc_;
  std::vector<BatchNorm2dLayer<T>> enc_bn_;
  DenseLayer<T> fc1_, fc2_, fc3_;
  std::vector<ConvTranspose2dLayer<T>> dec_;
  std::vector<BatchNorm2dLayer<T>> dec_bn_;
  Conv2dLayer<T> head_;
};

}  // namespace hpalf

#endif  // HPALF_DISCRIMINATOR_HPP
