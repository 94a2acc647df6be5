#include "hpalf/generator.hpp"

#include "hpalf/fft.hpp"

#include <cmath>
#include <sstream>

namespace hpalf {

namespace {
const int kEncoderBase[8] = {64, 128, 256, 512, 512, 512, 512, 512};
const int kDecoderBase[8] = {1024, 1024, 1024, 1024, 512, 256, 128, 64};
}  // namespace

ContextKind context_kind_from_string(const std::string& s) {
  if (s == "biconvlstm") return ContextKind::biconvlstm;
  if (s == "2dcnn") return ContextKind::cnn2d;
  if (s == "3dcnn") return ContextKind::cnn3d;
  if (s == "none" || s == "2.5d") return ContextKind::none_25d;
  throw Error(ErrorCode::config, "unknown context kind '" + s + "'");
}

std::string context_kind_name(ContextKind kind) {
  switch (kind) {
    case ContextKind::biconvlstm: return "biconvlstm";
    case ContextKind::cnn2d: return "2dcnn";
    case ContextKind::cnn3d: return "3dcnn";
    case ContextKind::none_25d: return "none";
  }
  return "?";
}

void GeneratorConfig::validate() const {
  require(width_multiplier > 0.0 && width_multiplier <= 1.0, ErrorCode::config,
          "GeneratorConfig: width_multiplier must lie in (0,1]");
  require(n_slices >= 3 && n_slices <= 7, ErrorCode::config,
          "GeneratorConfig: n_slices must lie in 3..7");
  require(lstm_channels >= 1, ErrorCode::config, "GeneratorConfig: lstm_channels must be >= 1");
  require(is_power_of_two(image_size) && image_size >= 16, ErrorCode::config,
          "GeneratorConfig: image_size must be a power of two >= 16");
}

int GeneratorConfig::stages() const { return std::min(8, log2_int(image_size)); }

std::vector<int> GeneratorConfig::encoder_widths() const {
  std::vector<int> w(stages());
  for (int i = 0; i < stages(); ++i) w[i] = ceil_scaled(kEncoderBase[i], width_multiplier);
  return w;
}

std::vector<int> GeneratorConfig::decoder_widths() const {
  std::vector<int> w(stages());
  const int offset = 8 - stages();
  for (int i = 0; i < stages(); ++i)
    w[i] = ceil_scaled(kDecoderBase[offset + i], width_multiplier);
  return w;
}

int GeneratorConfig::context_channels() const {
  return ceil_scaled(lstm_channels, width_multiplier);
}

// --- UNet -----------------------------------------------------------------------

template <typename T>
UNet<T>::UNet(const std::string& name, const GeneratorConfig& config, int in_channels,
              int out_channels)
    : config_(config), head_() {
  const std::vector<int> ew = config.encoder_widths();
  const std::vector<int> dw = config.decoder_widths();
  const int n = config.stages();
  int ch = in_channels;
  for (int i = 0; i < n; ++i) {
    enc_.emplace_back(name + ".enc" + std::to_string(i), ch, ew[i], 4, 2, 1);
    enc_bn_.emplace_back(name + ".enc" + std::to_string(i) + ".bn", ew[i]);
    ch = ew[i];
  }
  for (int i = 0; i < n; ++i) {
    const int in_ch = i == 0 ? ew[n - 1] : dw[i - 1] + ew[n - 1 - i];
    dec_.emplace_back(name + ".dec" + std::to_string(i), in_ch, dw[i], 4, 2, 1);
    dec_bn_.emplace_back(name + ".dec" + std::to_string(i) + ".bn", dw[i]);
  }
  head_ = Conv2dLayer<T>(name + ".head", dw[n - 1], out_channels, config.kernel, 1,
                         config.kernel / 2);
}

template <typename T>
int UNet<T>::forward(Tape<T>& t, int x, BatchNormMode mode) {
  const int n = static_cast<int>(enc_.size());
  std::vector<int> skips;
  skips.reserve(n);
  int h = x;
  for (int i = 0; i < n; ++i) {
    h = t.leaky_relu(enc_bn_[i].apply(t, enc_[i].apply(t, h), mode), T(0.2));
    skips.push_back(h);
  }
  for (int i = 0; i < n; ++i) {
    int in = i == 0 ? h : t.concat(std::vector<int>{h, skips[n - 1 - i]}, 1);
    h = t.leaky_relu(dec_bn_[i].apply(t, dec_[i].apply(t, in), mode), T(0.2));
  }
  return head_.apply(t, h);
}

template <typename T>
void UNet<T>::init(Rng& rng) {
  for (auto& l : enc_) l.init(rng);
  for (auto& l : dec_) l.init(rng);
  head_.init(rng);
}

template <typename T>
void UNet<T>::collect(std::vector<ParamTensor<T>*>& out) {
  for (size_t i = 0; i < enc_.size(); ++i) {
    enc_[i].collect(out);
    enc_bn_[i].collect(out);
  }
  for (size_t i = 0; i < dec_.size(); ++i) {
    dec_[i].collect(out);
    dec_bn_[i].collect(out);
  }
  head_.collect(out);
}

// --- ConvLSTM ---------------------------------------------------------------------

template <typename T>
ConvLstmCell<T>::ConvLstmCell(const std::string& name, int in_channels, int channels,
                              int kernel, int state_h, int state_w)
    : channels_(channels),
      state_h_(state_h),
      state_w_(state_w),
      wxi_(name + ".wxi", in_channels, channels, kernel, 1, kernel / 2),
      wxf_(name + ".wxf", in_channels, channels, kernel, 1, kernel / 2),
      wxc_(name + ".wxc", in_channels, channels, kernel, 1, kernel / 2),
      wxo_(name + ".wxo", in_channels, channels, kernel, 1, kernel / 2),
      whi_(name + ".whi", {channels, channels, kernel, kernel}),
      wci_(name + ".wci", {channels, channels, kernel, kernel}),
      whf_(name + ".whf", {channels, channels, kernel, kernel}),
      wcf_(name + ".wcf", {channels, channels, kernel, kernel}),
      whc_(name + ".whc", {channels, channels, kernel, kernel}),
      who_(name + ".who", {channels, channels, kernel, kernel}),
      wco_(name + ".wco", {1, channels, state_h, state_w}) {}

template <typename T>
int ConvLstmCell<T>::conv_nb(Tape<T>& t, ParamTensor<T>& w, int x) const {
  const int k = w.shape[2];
  int zero = t.constant({w.shape[0]}, std::vector<T>(w.shape[0], T(0)));
  return t.conv2d(x, t.leaf(w), zero, 1, k / 2);
}

template <typename T>
LstmStateNodes<T> ConvLstmCell<T>::zero_state(Tape<T>& t) const {
  const Shape s = {1, channels_, state_h_, state_w_};
  LstmStateNodes<T> st;
  st.hidden = t.constant(s, std::vector<T>(numel(s), T(0)));
  st.cell = t.constant(s, std::vector<T>(numel(s), T(0)));
  return st;
}

template <typename T>
LstmStateNodes<T> ConvLstmCell<T>::step(Tape<T>& t, int x, const LstmStateNodes<T>& prev) const {
  const int i_gate = t.sigmoid(t.add(t.add(wxi_.apply(t, x), conv_nb(t, whi_, prev.hidden)),
                                     conv_nb(t, wci_, prev.cell)));
  const int f_gate = t.sigmoid(t.add(t.add(wxf_.apply(t, x), conv_nb(t, whf_, prev.hidden)),
                                     conv_nb(t, wcf_, prev.cell)));
  const int cand = t.tanh(t.add(wxc_.apply(t, x), conv_nb(t, whc_, prev.hidden)));
  const int cell = t.add(t.mul(f_gate, prev.cell), t.mul(i_gate, cand));
  const int o_gate = t.sigmoid(t.add(t.add(wxo_.apply(t, x), conv_nb(t, who_, prev.hidden)),
                                     t.mul(t.leaf(wco_), cell)));
  LstmStateNodes<T> next;
  next.cell = cell;
  next.hidden = t.mul(o_gate, t.tanh(cell));
  return next;
}

template <typename T>
void ConvLstmCell<T>::init(Rng& rng) {
  wxi_.init(rng);
  wxf_.init(rng);
  wxc_.init(rng);
  wxo_.init(rng);
  const int fan = channels_ * whi_.shape[2] * whi_.shape[3];
  whi_.init_fan_in(rng, fan);
  wci_.init_fan_in(rng, fan);
  whf_.init_fan_in(rng, fan);
  wcf_.init_fan_in(rng, fan);
  whc_.init_fan_in(rng, fan);
  who_.init_fan_in(rng, fan);
  wco_.init_fan_in(rng, fan);
}

template <typename T>
void ConvLstmCell<T>::collect(std::vector<ParamTensor<T>*>& out) {
  wxi_.collect(out);
  wxf_.collect(out);
  wxc_.collect(out);
  wxo_.collect(out);
  out.push_back(&whi_);
  out.push_back(&wci_);
  out.push_back(&whf_);
  out.push_back(&wcf_);
  out.push_back(&whc_);
  out.push_back(&who_);
  out.push_back(&wco_);
}

template <typename T>
BiConvLstm<T>::BiConvLstm(const std::string& name, int in_channels, int channels, int kernel,
                          int state_h, int state_w)
    : cell_(name + ".cell", in_channels, channels, kernel, state_h, state_w),
      wy_fwd_(name + ".wy_fwd", channels, channels, kernel, 1, kernel / 2),
      wy_bwd_(name + ".wy_bwd", {channels, channels, kernel, kernel}) {}

template <typename T>
int BiConvLstm<T>::forward(Tape<T>& t, int sequence) const {
  const Shape s = t.shape(sequence);
  require(s.size() == 4 && s[0] >= 1, ErrorCode::dimension,
          "BiConvLstm: sequence must be (n,C,H,W)");
  const int n = s[0];
  std::vector<int> frames(n);
  for (int i = 0; i < n; ++i) frames[i] = t.narrow0(sequence, i, 1);

  std::vector<int> fwd(n), bwd(n);
  LstmStateNodes<T> st = cell_.zero_state(t);
  for (int i = 0; i < n; ++i) {
    st = cell_.step(t, frames[i], st);
    fwd[i] = st.hidden;
  }
  st = cell_.zero_state(t);
  for (int i = n - 1; i >= 0; --i) {
    st = cell_.step(t, frames[i], st);
    bwd[i] = st.hidden;
  }
  std::vector<int> outs(n);
  for (int i = 0; i < n; ++i) {
    const int k = wy_bwd_.shape[2];
    int zero = t.constant({wy_bwd_.shape[0]}, std::vector<T>(wy_bwd_.shape[0], T(0)));
    int mix = t.add(wy_fwd_.apply(t, fwd[i]),
                    t.conv2d(bwd[i], t.leaf(wy_bwd_), zero, 1, k / 2));
    outs[i] = t.tanh(mix);
  }
  return t.concat(outs, 0);
}

template <typename T>
void BiConvLstm<T>::init(Rng& rng) {
  cell_.init(rng);
  wy_fwd_.init(rng);
  wy_bwd_.init_fan_in(rng, wy_bwd_.shape[1] * wy_bwd_.shape[2] * wy_bwd_.shape[3]);
}

template <typename T>
void BiConvLstm<T>::collect(std::vector<ParamTensor<T>*>& out) {
  cell_.collect(out);
  wy_fwd_.collect(out);
  out.push_back(&wy_bwd_);
}

// --- Generator ----------------------------------------------------------------------

template <typename T>
Generator<T>::Generator(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  const int cc = config_.context_channels();
  const int k = config_.kernel;
  if (config_.context == ContextKind::none_25d) {
    // 2.5D variant: the window rides in the channel axis of a single U-net pass.
    unet_ = std::make_unique<UNet<T>>("g.unet25d", config_, config_.n_slices,
                                      config_.n_slices);
    return;
  }
  unet_ = std::make_unique<UNet<T>>("g.unet", config_, 1, 1);
  lift_ = Conv2dLayer<T>("g.lift", 1, cc, k, 1, k / 2);
  proj_ = Conv2dLayer<T>("g.proj", cc, 1, k, 1, k / 2);
  switch (config_.context) {
    case ContextKind::biconvlstm:
      lstm_ = std::make_unique<BiConvLstm<T>>("g.cal", cc, cc, k, config_.image_size,
                                              config_.image_size);
      break;
    case ContextKind::cnn2d:
      ctx_a_ = Conv2dLayer<T>("g.ctx2d.a", cc, cc, k, 1, k / 2);
      ctx_b_ = Conv2dLayer<T>("g.ctx2d.b", cc, cc, k, 1, k / 2);
      break;
    case ContextKind::cnn3d:
      ctx_a_ = Conv2dLayer<T>("g.ctx3d.a", config_.n_slices * cc, config_.n_slices * cc, k, 1,
                              k / 2);
      ctx_b_ = Conv2dLayer<T>("g.ctx3d.b", config_.n_slices * cc, config_.n_slices * cc, k, 1,
                              k / 2);
      break;
    case ContextKind::none_25d: break;
  }
}

template <typename T>
GeneratorOutput<T> Generator<T>::forward(Tape<T>& t, int x_u, BatchNormMode mode) {
  const Shape s = t.shape(x_u);
  require(s.size() == 4 && s[1] == 1 && s[2] == config_.image_size && s[3] == config_.image_size,
          ErrorCode::config,
          "Generator: input must be (n,1," + std::to_string(config_.image_size) + "," +
              std::to_string(config_.image_size) + "), got " + shape_str(s));
  require(s[0] == config_.n_slices, ErrorCode::config,
          "Generator: window depth " + std::to_string(s[0]) + " does not match configured " +
              std::to_string(config_.n_slices));
  const int n = s[0];
  GeneratorOutput<T> out;

  if (config_.context == ContextKind::none_25d) {
    int stacked = t.reshape(x_u, {1, n, config_.image_size, config_.image_size});
    int y = unet_->forward(t, stacked, mode);
    out.x_unet = t.reshape(y, s);
    out.x_rec = t.tanh(out.x_unet);
    return out;
  }

  out.x_unet = unet_->forward(t, x_u, mode);
  int seq = t.leaky_relu(lift_.apply(t, out.x_unet), T(0.2));
  int ctx;
  switch (config_.context) {
    case ContextKind::biconvlstm: ctx = lstm_->forward(t, seq); break;
    case ContextKind::cnn2d:
      ctx = ctx_b_.apply(t, t.leaky_relu(ctx_a_.apply(t, seq), T(0.2)));
      break;
    case ContextKind::cnn3d: {
      const int cc = config_.context_channels();
      int flat = t.reshape(seq, {1, n * cc, config_.image_size, config_.image_size});
      int mixed = ctx_b_.apply(t, t.leaky_relu(ctx_a_.apply(t, flat), T(0.2)));
      ctx = t.reshape(mixed, {n, cc, config_.image_size, config_.image_size});
      break;
    }
    default: ctx = seq; break;
  }
  int residual = proj_.apply(t, ctx);
  out.x_rec = t.tanh(t.add(out.x_unet, residual));
  return out;
}

template <typename T>
void Generator<T>::init(Rng& rng) {
  unet_->init(rng);
  if (config_.context == ContextKind::none_25d) return;
  lift_.init(rng);
  proj_.init(rng);
  if (lstm_) lstm_->init(rng);
  if (config_.context == ContextKind::cnn2d || config_.context == ContextKind::cnn3d) {
    ctx_a_.init(rng);
    ctx_b_.init(rng);
  }
}

template <typename T>
std::vector<ParamTensor<T>*> Generator<T>::params() {
  std::vector<ParamTensor<T>*> out;
  unet_->collect(out);
  if (config_.context != ContextKind::none_25d) {
    lift_.collect(out);
    if (lstm_) lstm_->collect(out);
    if (config_.context == ContextKind::cnn2d || config_.context == ContextKind::cnn3d) {
      ctx_a_.collect(out);
      ctx_b_.collect(out);
    }
    proj_.collect(out);
  }
  return out;
}

template <typename T>
int64_t Generator<T>::parameter_count() {
  int64_t n = 0;
  for (const ParamTensor<T>* p : params())
    if (p->requires_grad) n += p->size();
  return n;
}

template <typename T>
std::string Generator<T>::describe() {
  std::ostringstream os;
  os << "generator context=" << context_kind_name(config_.context)
     << " image_size=" << config_.image_size << " n_slices=" << config_.n_slices
     << " width_multiplier=" << config_.width_multiplier << " stages=" << config_.stages()
     << "\n  encoder widths:";
  for (int w : config_.encoder_widths()) os << " " << w;
  os << "\n  decoder widths:";
  for (int w : config_.decoder_widths()) os << " " << w;
  os << "\n  context channels: " << config_.context_channels();
  os << "\n  trainable parameters: " << parameter_count();
  return os.str();
}

template class UNet<float>;
template class UNet<double>;
template class ConvLstmCell<float>;
template class ConvLstmCell<double>;
template class BiConvLstm<float>;
template class BiConvLstm<double>;
template class Generator<float>;
template class Generator<double>;

}  // namespace hpalf
