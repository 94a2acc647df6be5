#ifndef HPALF_GENERATOR_HPP
#define HPALF_GENERATOR_HPP

#include <memory>
#include <string>
#include <vector>

#include "hpalf/layers.hpp"

namespace hpalf {

enum class ContextKind { biconvlstm, cnn2d, cnn3d, none_25d };

ContextKind context_kind_from_string(const std::string& s);
std::string context_kind_name(ContextKind kind);

struct GeneratorConfig {
  double width_multiplier = 1.0;
  int n_slices = 5;          // 3..7
  int lstm_channels = 32;    // full-scale; scaled by width_multiplier
  int kernel = 3;            // stride-1 convolutions
  int image_size = 256;      // power of two
  ContextKind context = ContextKind::biconvlstm;

  void validate() const;
  int stages() const;                      // U-net depth, min(8, log2(image_size))
  std::vector<int> encoder_widths() const;  // ceil(m * [64,...,512]), first stages()
  std::vector<int> decoder_widths() const;  // ceil(m * [1024,...,64]), last stages()
  int context_channels() const;             // ceil(m * lstm_channels)
};

/// Shared-weight per-slice U-net: stride-2 conv encoder, mirrored
/// transposed-conv decoder with skip concatenations, linear k3 output head.
/// The slice axis rides in the batch dimension, so slices never mix here.
template <typename T>
class UNet {
 public:
  UNet(const std::string& name, const GeneratorConfig& config, int in_channels,
       int out_channels);

  int forward(Tape<T>& t, int x, BatchNormMode mode);
  void init(Rng& rng);
  void collect(std::vector<ParamTensor<T>*>& out);

 private:
  GeneratorConfig config_;
  std::vector<Conv2dLayer<T>> enc_;
  std::vector<BatchNorm2dLayer<T>> enc_bn_;
  std::vector<ConvTranspose2dLayer<T>> dec_;
  std::vector<BatchNorm2dLayer<T>> dec_bn_;
  Conv2dLayer<T> head_;
};

template <typename T>
struct LstmStateNodes {
  int hidden = -1;  // (1,C,h,w), values in (-1,1)
  int cell = -1;
};

/// Single ConvLSTM cell, shared by the forward and backward passes of the
/// bidirectional wrapper. Gate recurrences follow the printed cell: the
/// i/f gates convolve X, H and C; the o gate uses the Hadamard peephole on
/// the fresh cell state.
template <typename T>
class ConvLstmCell {
 public:
  ConvLstmCell(const std::string& name, int in_channels, int channels, int kernel,
               int state_h, int state_w);

  LstmStateNodes<T> step(Tape<T>& t, int x, const LstmStateNodes<T>& prev) const;
  LstmStateNodes<T> zero_state(Tape<T>& t) const;
  void init(Rng& rng);
  void collect(std::vector<ParamTensor<T>*>& out);

  int channels() const { return channels_; }

 private:
  int conv_nb(Tape<T>& t, ParamTensor<T>& w, int x) const;  // bias-free conv

  int channels_ = 0;
  int state_h_ = 0, state_w_ = 0;
  mutable Conv2dLayer<T> wxi_, wxf_, wxc_, wxo_;  // carry the gate biases
  mutable ParamTensor<T> whi_, wci_, whf_, wcf_, whc_, who_;
  mutable ParamTensor<T> wco_;  // Hadamard peephole, (1,C,h,w)
};

/// Bi-ConvLSTM: one shared cell run over both directions, direction-specific
/// output convolutions, tanh fusion.
template <typename T>
class BiConvLstm {
 public:
  BiConvLstm(const std::string& name, int in_channels, int channels, int kernel, int state_h,
             int state_w);

  // sequence: (n, C_in, H, W) -> (n, C, H, W)
  int forward(Tape<T>& t, int sequence) const;
  void init(Rng& rng);
  void collect(std::vector<ParamTensor<T>*>& out);

 private:
  ConvLstmCell<T> cell_;
  mutable Conv2dLayer<T> wy_fwd_;  // carries the fusion bias
  mutable ParamTensor<T> wy_bwd_;
};

template <typename T>
struct GeneratorOutput {
  int x_unet = -1;  // per-slice U-net output (n,1,H,W)
  int x_rec = -1;   // refined reconstruction (n,1,H,W), in [-1,1]
};

/// Context-aware generator: per-slice U-net, context block over the slice
/// axis, residual projection and tanh squash.
template <typename T>
class Generator {
 public:
  explicit Generator(const GeneratorConfig& config);

  GeneratorOutput<T> forward(Tape<T>& t, int x_u, BatchNormMode mode);

  void init(Rng& rng);
  std::vector<ParamTensor<T>*> params();
  int64_t parameter_count();
  std::string describe();

  const GeneratorConfig& config() const { return config_; }

 private:
  GeneratorConfig config_;
  std::unique_ptr<UNet<T>> unet_;
  Conv2dLayer<T> lift_;  // 1 -> context channels
  std::unique_ptr<BiConvLstm<T>> lstm_;
  Conv2dLayer<T> ctx_a_, ctx_b_;  // 2D/3D CNN context variants
  Conv2dLayer<T> proj_;           // context channels -> 1 residual
};

}  // namespace hpalf

#endif  // HPALF_GENERATOR_HPP
