#ifndef HPALF_LAYERS_HPP
#define HPALF_LAYERS_HPP

#include <string>
#include <vector>

#include "hpalf/tensor.hpp"

namespace hpalf {

// Thin parameter-owning wrappers over the tape ops. Construction fixes
// shapes; init() draws fan-in scaled uniform weights from the caller's rng in
// declaration order, which makes a run seed reproduce every parameter.

template <typename T>
struct Conv2dLayer {
  ParamTensor<T> w, b;
  int stride = 1, pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, int in_ch, int out_ch, int k, int stride_, int pad_)
      : w(name + ".w", {out_ch, in_ch, k, k}), b(name + ".b", {out_ch}), stride(stride_),
        pad(pad_) {}

  void init(Rng& rng) {
    const int fan_in = w.shape[1] * w.shape[2] * w.shape[3];
    w.init_fan_in(rng, fan_in);
    b.init_fan_in(rng, fan_in);
  }

  int apply(Tape<T>& t, int x) { return t.conv2d(x, t.leaf(w), t.leaf(b), stride, pad); }

  void collect(std::vector<ParamTensor<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct ConvTranspose2dLayer {
  ParamTensor<T> w, b;
  int stride = 2, pad = 1;

  ConvTranspose2dLayer() = default;
  ConvTranspose2dLayer(const std::string& name, int in_ch, int out_ch, int k, int stride_,
                       int pad_)
      : w(name + ".w", {in_ch, out_ch, k, k}), b(name + ".b", {out_ch}), stride(stride_),
        pad(pad_) {}

  void init(Rng& rng) {
    const int fan_in = w.shape[0] * w.shape[2] * w.shape[3];
    w.init_fan_in(rng, fan_in);
    b.init_fan_in(rng, fan_in);
  }

  int apply(Tape<T>& t, int x) {
    return t.conv_transpose2d(x, t.leaf(w), t.leaf(b), stride, pad);
  }

  void collect(std::vector<ParamTensor<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct DenseLayer {
  ParamTensor<T> w, b;

  DenseLayer() = default;
  DenseLayer(const std::string& name, int in_dim, int out_dim)
      : w(name + ".w", {out_dim, in_dim}), b(name + ".b", {out_dim}) {}

  void init(Rng& rng) {
    w.init_fan_in(rng, w.shape[1]);
    b.init_fan_in(rng, w.shape[1]);
  }

  int apply(Tape<T>& t, int x) { return t.dense(x, t.leaf(w), t.leaf(b)); }

  void collect(std::vector<ParamTensor<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct BatchNorm2dLayer {
  ParamTensor<T> gamma, beta;
  ParamTensor<T> run_mean, run_var;  // frozen buffers, persisted in checkpoints
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(const std::string& name, int channels)
      : gamma(name + ".gamma", {channels}),
        beta(name + ".beta", {channels}),
        run_mean(name + ".run_mean", {channels}, false),
        run_var(name + ".run_var", {channels}, false) {
    gamma.fill(T(1));
    beta.fill(T(0));
    run_mean.fill(T(0));
    run_var.fill(T(1));
  }

  void init(Rng&) {}  // gamma/beta start at identity

  int apply(Tape<T>& t, int x, BatchNormMode mode) {
    return t.batchnorm2d(x, t.leaf(gamma), t.leaf(beta), mode, &run_mean.value, &run_var.value,
                         momentum, eps);
  }

  void collect(std::vector<ParamTensor<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&run_mean);
    out.push_back(&run_var);
  }
};

inline int ceil_scaled(int width, double multiplier) {
  const double v = static_cast<double>(width) * multiplier;
  int r = static_cast<int>(std::ceil(v - 1e-12));
  return r < 1 ? 1 : r;
}

inline int log2_int(int n) {
  int s = 0;
  while ((1 << (s + 1)) <= n) ++s;
  return s;
}

}  // namespace hpalf

#endif  // HPALF_LAYERS_HPP
