#include "hpalf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "hpalf/fft.hpp"

namespace hpalf {

namespace {

// ---- small GEMM kernels ----------------------------------------------------
// Row-major throughout. Accumulation order over k is fixed for every thread
// count: a thread owns whole rows of C, so results are bit-reproducible.

template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
  parallel_for(M, [&](int64_t m0, int64_t m1) {
    for (int64_t m = m0; m < m1; ++m) {
      T* c = C + m * N;
      const T* a = A + m * K;
      for (int k = 0; k < K; ++k) {
        const T av = a[k];
        const T* b = B + static_cast<size_t>(k) * N;
        for (int n = 0; n < N; ++n) c[n] += av * b[n];
      }
    }
  });
}

// C (M,N) += A^T B with A stored (K,M)
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
  parallel_for(M, [&](int64_t m0, int64_t m1) {
    for (int64_t m = m0; m < m1; ++m) {
      T* c = C + m * N;
      for (int k = 0; k < K; ++k) {
        const T av = A[static_cast<size_t>(k) * M + m];
        const T* b = B + static_cast<size_t>(k) * N;
        for (int n = 0; n < N; ++n) c[n] += av * b[n];
      }
    }
  });
}

// C (M,N) += A B^T with B stored (N,K)
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
  parallel_for(M, [&](int64_t m0, int64_t m1) {
    for (int64_t m = m0; m < m1; ++m) {
      const T* a = A + static_cast<size_t>(m) * K;
      T* c = C + m * N;
      for (int n = 0; n < N; ++n) {
        const T* b = B + static_cast<size_t>(n) * K;
        T acc = T(0);
        for (int k = 0; k < K; ++k) acc += a[k] * b[k];
        c[n] += acc;
      }
    }
  });
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int OH, int OW, T* col) {
  const int L = OH * OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + (static_cast<size_t>(c) * k * k + ki * k + kj) * L;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ki;
          const bool row_ok = iy >= 0 && iy < H;
          const T* src = x + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[oy * OW + ox] = (row_ok && ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int k, int stride, int pad, int OH, int OW,
                T* x) {
  const int L = OH * OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + (static_cast<size_t>(c) * k * k + ki * k + kj) * L;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst[ix] += src[oy * OW + ox];
          }
        }
      }
    }
  }
}

// Floor-division output sizing, the usual convolution convention. Positions
// past the last full kernel placement are dropped.
int conv_out_extent(int in, int k, int stride, int pad) {
  const int span = in + 2 * pad - k;
  require(span >= 0, ErrorCode::config,
          "conv2d: kernel does not fit the padded input (in=" + std::to_string(in) +
              ", k=" + std::to_string(k) + ", pad=" + std::to_string(pad) + ")");
  return span / stride + 1;
}

}  // namespace

// ---- node plumbing ----------------------------------------------------------

template <typename T>
int Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
std::vector<T>& Tape<T>::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::add_grad(int id, const T* g, int64_t count) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  std::vector<T>& buf = grad_buf(id);
  for (int64_t i = 0; i < count; ++i) buf[i] += g[i];
}

template <typename T>
T Tape<T>::scalar(int id) const {
  require(numel(nodes_[id].shape) == 1, ErrorCode::contract, "scalar(): node is not scalar");
  return nodes_[id].value[0];
}

template <typename T>
int Tape<T>::leaf(ParamTensor<T>& p) {
  require(p.size() == static_cast<int64_t>(p.value.size()), ErrorCode::dimension,
          "leaf: data length does not match shape for '" + p.name + "'");
  Node n;
  n.kind = OpKind::leaf;
  n.shape = p.shape;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.requires_grad;
  return push(std::move(n));
}

template <typename T>
int Tape<T>::constant(Shape shape, std::vector<T> value) {
  require(numel(shape) == static_cast<int64_t>(value.size()), ErrorCode::dimension,
          "constant: data length does not match shape");
  Node n;
  n.kind = OpKind::constant;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = false;
  return push(std::move(n));
}

template <typename T>
int Tape<T>::input(Shape shape, std::vector<T> value, bool requires_grad) {
  require(numel(shape) == static_cast<int64_t>(value.size()), ErrorCode::dimension,
          "input: data length does not match shape");
  Node n;
  n.kind = OpKind::input;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
void Tape<T>::backward(int root) {
  require(root >= 0 && root < static_cast<int>(nodes_.size()), ErrorCode::contract,
          "backward: bad node id");
  require(numel(nodes_[root].shape) == 1, ErrorCode::contract,
          "backward: root must be a scalar");
  for (auto& n : nodes_) {
    n.grad.clear();
  }
  grad_buf(root).assign(1, T(1));
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.kind == OpKind::leaf && n.param != nullptr && n.param->requires_grad) {
      for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
    }
    if (n.backward) n.backward(*this, id);
  }
}

// ---- convolutions -----------------------------------------------------------

template <typename T>
int Tape<T>::conv2d(int x, int w, int b, int stride, int padding) {
  const Shape& xs = nodes_[x].shape;
  const Shape& ws = nodes_[w].shape;
  const Shape& bs = nodes_[b].shape;
  require(xs.size() == 4, ErrorCode::dimension, "conv2d: input must be NCHW");
  require(ws.size() == 4 && ws[2] == ws[3], ErrorCode::dimension,
          "conv2d: weight must be OIkk with square kernel");
  require(stride >= 1 && padding >= 0, ErrorCode::config, "conv2d: bad stride/padding");
  require(xs[1] == ws[1], ErrorCode::dimension,
          "conv2d: input channels " + std::to_string(xs[1]) + " != weight I " +
              std::to_string(ws[1]));
  require(bs.size() == 1 && bs[0] == ws[0], ErrorCode::dimension, "conv2d: bias/O mismatch");
  const int N = xs[0], I = xs[1], H = xs[2], W = xs[3];
  const int O = ws[0], k = ws[2];
  const int OH = conv_out_extent(H, k, stride, padding);
  const int OW = conv_out_extent(W, k, stride, padding);
  const int L = OH * OW;
  const int KK = I * k * k;

  Node n;
  n.kind = OpKind::conv2d;
  n.shape = {N, O, OH, OW};
  n.value.assign(static_cast<size_t>(N) * O * L, T(0));
  n.inputs = {x, w, b};
  n.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad || nodes_[b].requires_grad;

  std::vector<T> col(static_cast<size_t>(KK) * L);
  for (int s = 0; s < N; ++s) {
    im2col(nodes_[x].value.data() + static_cast<size_t>(s) * I * H * W, I, H, W, k, stride,
           padding, OH, OW, col.data());
    T* out = n.value.data() + static_cast<size_t>(s) * O * L;
    gemm_nn(O, L, KK, nodes_[w].value.data(), col.data(), out);
    for (int o = 0; o < O; ++o) {
      const T bias = nodes_[b].value[o];
      for (int i = 0; i < L; ++i) out[static_cast<size_t>(o) * L + i] += bias;
    }
  }

  n.backward = [stride, padding](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0], w = node.inputs[1], b = node.inputs[2];
    const Shape& xs = t.nodes_[x].shape;
    const Shape& ws = t.nodes_[w].shape;
    const int N = xs[0], I = xs[1], H = xs[2], W = xs[3];
    const int O = ws[0], k = ws[2];
    const int OH = node.shape[2], OW = node.shape[3];
    const int L = OH * OW, KK = I * k * k;
    const T* gout = node.grad.data();

    if (t.nodes_[b].requires_grad) {
      std::vector<T> gb(O, T(0));
      for (int s = 0; s < N; ++s)
        for (int o = 0; o < O; ++o) {
          const T* g = gout + (static_cast<size_t>(s) * O + o) * L;
          T acc = T(0);
          for (int i = 0; i < L; ++i) acc += g[i];
          gb[o] += acc;
        }
      t.add_grad(b, gb.data(), O);
    }
    const bool need_w = t.nodes_[w].requires_grad;
    const bool need_x = t.nodes_[x].requires_grad;
    if (!need_w && !need_x) return;
    std::vector<T> col(static_cast<size_t>(KK) * L);
    std::vector<T> gw(need_w ? static_cast<size_t>(O) * KK : 0, T(0));
    std::vector<T> gx(need_x ? static_cast<size_t>(I) * H * W : 0);
    std::vector<T> gcol(need_x ? static_cast<size_t>(KK) * L : 0);
    for (int s = 0; s < N; ++s) {
      const T* g = gout + static_cast<size_t>(s) * O * L;
      if (need_w) {
        im2col(t.nodes_[x].value.data() + static_cast<size_t>(s) * I * H * W, I, H, W, k, stride,
               padding, OH, OW, col.data());
        gemm_nt(O, KK, L, g, col.data(), gw.data());
      }
      if (need_x) {
        std::fill(gcol.begin(), gcol.end(), T(0));
        gemm_tn(KK, L, O, t.nodes_[w].value.data(), g, gcol.data());
        std::fill(gx.begin(), gx.end(), T(0));
        col2im_add(gcol.data(), I, H, W, k, stride, padding, OH, OW, gx.data());
        std::vector<T>& buf = t.grad_buf(x);
        T* dst = buf.data() + static_cast<size_t>(s) * I * H * W;
        for (size_t i = 0; i < gx.size(); ++i) dst[i] += gx[i];
      }
    }
    if (need_w) t.add_grad(w, gw.data(), static_cast<int64_t>(gw.size()));
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::conv_transpose2d(int x, int w, int b, int stride, int padding) {
  const Shape& xs = nodes_[x].shape;
  const Shape& ws = nodes_[w].shape;
  const Shape& bs = nodes_[b].shape;
  require(xs.size() == 4, ErrorCode::dimension, "conv_transpose2d: input must be NCHW");
  require(ws.size() == 4 && ws[2] == ws[3], ErrorCode::dimension,
          "conv_transpose2d: weight must be OIkk with square kernel");
  require(stride >= 1 && padding >= 0, ErrorCode::config, "conv_transpose2d: bad stride/padding");
  require(xs[1] == ws[0], ErrorCode::dimension,
          "conv_transpose2d: input channels " + std::to_string(xs[1]) + " != weight O " +
              std::to_string(ws[0]));
  require(bs.size() == 1 && bs[0] == ws[1], ErrorCode::dimension,
          "conv_transpose2d: bias/I mismatch");
  const int N = xs[0], O = xs[1], H = xs[2], W = xs[3];
  const int I = ws[1], k = ws[2];
  const int OH = (H - 1) * stride - 2 * padding + k;
  const int OW = (W - 1) * stride - 2 * padding + k;
  require(OH >= 1 && OW >= 1, ErrorCode::dimension, "conv_transpose2d: empty output");
  const int L = H * W;
  const int KK = I * k * k;

  Node n;
  n.kind = OpKind::conv_transpose2d;
  n.shape = {N, I, OH, OW};
  n.value.assign(static_cast<size_t>(N) * I * OH * OW, T(0));
  n.inputs = {x, w, b};
  n.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad || nodes_[b].requires_grad;

  std::vector<T> col(static_cast<size_t>(KK) * L);
  for (int s = 0; s < N; ++s) {
    std::fill(col.begin(), col.end(), T(0));
    gemm_tn(KK, L, O, nodes_[w].value.data(),
            nodes_[x].value.data() + static_cast<size_t>(s) * O * L, col.data());
    T* out = n.value.data() + static_cast<size_t>(s) * I * OH * OW;
    col2im_add(col.data(), I, OH, OW, k, stride, padding, H, W, out);
    for (int c = 0; c < I; ++c) {
      const T bias = nodes_[b].value[c];
      T* dst = out + static_cast<size_t>(c) * OH * OW;
      for (int i = 0; i < OH * OW; ++i) dst[i] += bias;
    }
  }

  n.backward = [stride, padding](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0], w = node.inputs[1], b = node.inputs[2];
    const Shape& xs = t.nodes_[x].shape;
    const Shape& ws = t.nodes_[w].shape;
    const int N = xs[0], O = xs[1], H = xs[2], W = xs[3];
    const int I = ws[1], k = ws[2];
    const int OH = node.shape[2], OW = node.shape[3];
    const int L = H * W, KK = I * k * k;
    const T* gout = node.grad.data();

    if (t.nodes_[b].requires_grad) {
      std::vector<T> gb(I, T(0));
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < I; ++c) {
          const T* g = gout + (static_cast<size_t>(s) * I + c) * OH * OW;
          T acc = T(0);
          for (int i = 0; i < OH * OW; ++i) acc += g[i];
          gb[c] += acc;
        }
      t.add_grad(b, gb.data(), I);
    }
    const bool need_w = t.nodes_[w].requires_grad;
    const bool need_x = t.nodes_[x].requires_grad;
    if (!need_w && !need_x) return;
    std::vector<T> col(static_cast<size_t>(KK) * L);
    std::vector<T> gw(need_w ? static_cast<size_t>(O) * KK : 0, T(0));
    for (int s = 0; s < N; ++s) {
      const T* g = gout + static_cast<size_t>(s) * I * OH * OW;
      // im2col over the *output*-sized gradient recovers the conv2d picture.
      im2col(g, I, OH, OW, k, stride, padding, H, W, col.data());
      if (need_x) {
        std::vector<T> gx(static_cast<size_t>(O) * L, T(0));
        gemm_nn(O, L, KK, t.nodes_[w].value.data(), col.data(), gx.data());
        std::vector<T>& buf = t.grad_buf(x);
        T* dst = buf.data() + static_cast<size_t>(s) * O * L;
        for (size_t i = 0; i < gx.size(); ++i) dst[i] += gx[i];
      }
      if (need_w) {
        gemm_nt(O, KK, L, t.nodes_[x].value.data() + static_cast<size_t>(s) * O * L, col.data(),
                gw.data());
      }
    }
    if (need_w) t.add_grad(w, gw.data(), static_cast<int64_t>(gw.size()));
  };
  return push(std::move(n));
}

// ---- dense ------------------------------------------------------------------

template <typename T>
int Tape<T>::dense(int x, int w, int b) {
  const Shape& xs = nodes_[x].shape;
  const Shape& ws = nodes_[w].shape;
  const Shape& bs = nodes_[b].shape;
  require(xs.size() == 2, ErrorCode::dimension, "dense: input must be (N,In)");
  require(ws.size() == 2, ErrorCode::dimension, "dense: weight must be (Out,In)");
  require(ws[1] == xs[1], ErrorCode::dimension,
          "dense: weight columns " + std::to_string(ws[1]) + " != input length " +
              std::to_string(xs[1]));
  require(bs.size() == 1 && bs[0] == ws[0], ErrorCode::dimension, "dense: bias length mismatch");
  const int N = xs[0], In = xs[1], Out = ws[0];

  Node n;
  n.kind = OpKind::dense;
  n.shape = {N, Out};
  n.value.assign(static_cast<size_t>(N) * Out, T(0));
  n.inputs = {x, w, b};
  n.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad || nodes_[b].requires_grad;
  gemm_nt(N, Out, In, nodes_[x].value.data(), nodes_[w].value.data(), n.value.data());
  for (int s = 0; s < N; ++s)
    for (int o = 0; o < Out; ++o) n.value[static_cast<size_t>(s) * Out + o] += nodes_[b].value[o];

  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0], w = node.inputs[1], b = node.inputs[2];
    const int N = t.nodes_[x].shape[0], In = t.nodes_[x].shape[1], Out = t.nodes_[w].shape[0];
    const T* g = node.grad.data();
    if (t.nodes_[b].requires_grad) {
      std::vector<T> gb(Out, T(0));
      for (int s = 0; s < N; ++s)
        for (int o = 0; o < Out; ++o) gb[o] += g[static_cast<size_t>(s) * Out + o];
      t.add_grad(b, gb.data(), Out);
    }
    if (t.nodes_[x].requires_grad) {
      std::vector<T> gx(static_cast<size_t>(N) * In, T(0));
      gemm_nn(N, In, Out, g, t.nodes_[w].value.data(), gx.data());
      t.add_grad(x, gx.data(), static_cast<int64_t>(gx.size()));
    }
    if (t.nodes_[w].requires_grad) {
      std::vector<T> gw(static_cast<size_t>(Out) * In, T(0));
      gemm_tn(Out, In, N, g, t.nodes_[x].value.data(), gw.data());
      t.add_grad(w, gw.data(), static_cast<int64_t>(gw.size()));
    }
  };
  return push(std::move(n));
}

// ---- batch norm ---------------------------------------------------------------

template <typename T>
int Tape<T>::batchnorm2d(int x, int gamma, int beta, BatchNormMode mode,
                         std::vector<T>* running_mean, std::vector<T>* running_var, T momentum,
                         T eps) {
  const Shape& xs = nodes_[x].shape;
  require(xs.size() == 4, ErrorCode::dimension, "batchnorm2d: input must be NCHW");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  require(nodes_[gamma].shape == Shape{C} && nodes_[beta].shape == Shape{C}, ErrorCode::dimension,
          "batchnorm2d: gamma/beta length must equal channel count");
  require(running_mean && running_var && static_cast<int>(running_mean->size()) == C &&
              static_cast<int>(running_var->size()) == C,
          ErrorCode::dimension, "batchnorm2d: running stats length must equal channel count");
  require(eps > T(0), ErrorCode::config, "batchnorm2d: epsilon must be positive");

  const int64_t m = static_cast<int64_t>(N) * H * W;
  const int64_t plane = static_cast<int64_t>(H) * W;
  std::vector<T> mu(C, T(0)), inv_std(C, T(0));
  const T* xv = nodes_[x].value.data();

  if (mode == BatchNormMode::train) {
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int s = 0; s < N; ++s) {
        const T* p = xv + (static_cast<size_t>(s) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
      }
      const double mean_c = acc / static_cast<double>(m);
      double var = 0.0;
      for (int s = 0; s < N; ++s) {
        const T* p = xv + (static_cast<size_t>(s) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i]) - mean_c;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      mu[c] = static_cast<T>(mean_c);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1)
                                    : var;
      (*running_mean)[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>((*running_mean)[c]) +
                         momentum * mean_c);
      (*running_var)[c] = static_cast<T>(
          (1.0 - momentum) * static_cast<double>((*running_var)[c]) + momentum * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mu[c] = (*running_mean)[c];
      inv_std[c] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>((*running_var)[c]) +
                                         static_cast<double>(eps)));
    }
  }

  Node n;
  n.kind = OpKind::batchnorm2d;
  n.shape = xs;
  n.value.resize(nodes_[x].value.size());
  n.inputs = {x, gamma, beta};
  n.requires_grad = nodes_[x].requires_grad || nodes_[gamma].requires_grad ||
                    nodes_[beta].requires_grad;
  const T* gv = nodes_[gamma].value.data();
  const T* bv = nodes_[beta].value.data();
  for (int s = 0; s < N; ++s)
    for (int c = 0; c < C; ++c) {
      const T* p = xv + (static_cast<size_t>(s) * C + c) * plane;
      T* o = n.value.data() + (static_cast<size_t>(s) * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) o[i] = gv[c] * (p[i] - mu[c]) * inv_std[c] + bv[c];
    }

  n.backward = [mode, mu, inv_std, m, plane](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0], gamma = node.inputs[1], beta = node.inputs[2];
    const Shape& xs = t.nodes_[x].shape;
    const int N = xs[0], C = xs[1];
    const T* g = node.grad.data();
    const T* xv = t.nodes_[x].value.data();
    const T* gv = t.nodes_[gamma].value.data();

    std::vector<T> dgamma(C, T(0)), dbeta(C, T(0));
    std::vector<double> sum_g(C, 0.0), sum_gxhat(C, 0.0);
    for (int s = 0; s < N; ++s)
      for (int c = 0; c < C; ++c) {
        const T* gp = g + (static_cast<size_t>(s) * C + c) * plane;
        const T* xp = xv + (static_cast<size_t>(s) * C + c) * plane;
        double a = 0.0, bsum = 0.0;
        for (int64_t i = 0; i < plane; ++i) {
          const double xhat = (static_cast<double>(xp[i]) - mu[c]) * inv_std[c];
          a += static_cast<double>(gp[i]);
          bsum += static_cast<double>(gp[i]) * xhat;
        }
        sum_g[c] += a;
        sum_gxhat[c] += bsum;
      }
    for (int c = 0; c < C; ++c) {
      dbeta[c] = static_cast<T>(sum_g[c]);
      dgamma[c] = static_cast<T>(sum_gxhat[c]);
    }
    if (t.nodes_[beta].requires_grad) t.add_grad(beta, dbeta.data(), C);
    if (t.nodes_[gamma].requires_grad) t.add_grad(gamma, dgamma.data(), C);

    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    if (mode == BatchNormMode::train) {
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c) {
          const T* gp = g + (static_cast<size_t>(s) * C + c) * plane;
          const T* xp = xv + (static_cast<size_t>(s) * C + c) * plane;
          T* dst = gx.data() + (static_cast<size_t>(s) * C + c) * plane;
          const double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t i = 0; i < plane; ++i) {
            const double xhat = (static_cast<double>(xp[i]) - mu[c]) * inv_std[c];
            const double term = static_cast<double>(gp[i]) - inv_m * sum_g[c] -
                                inv_m * xhat * sum_gxhat[c];
            dst[i] += static_cast<T>(static_cast<double>(gv[c]) * inv_std[c] * term);
          }
        }
    } else {
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c) {
          const T* gp = g + (static_cast<size_t>(s) * C + c) * plane;
          T* dst = gx.data() + (static_cast<size_t>(s) * C + c) * plane;
          const T f = gv[c] * inv_std[c];
          for (int64_t i = 0; i < plane; ++i) dst[i] += f * gp[i];
        }
    }
  };
  return push(std::move(n));
}

// ---- activations --------------------------------------------------------------

template <typename T>
int Tape<T>::leaky_relu(int x, T slope) {
  require(slope > T(0) && slope < T(1), ErrorCode::config,
          "leaky_relu: slope must lie in (0,1)");
  Node n;
  n.kind = OpKind::leaky_relu;
  n.shape = nodes_[x].shape;
  n.value.resize(nodes_[x].value.size());
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  const T* xv = nodes_[x].value.data();
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = xv[i] >= T(0) ? xv[i] : slope * xv[i];
  n.backward = [slope](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T* xv = t.nodes_[x].value.data();
    const T* g = node.grad.data();
    for (size_t i = 0; i < node.grad.size(); ++i)
      gx[i] += xv[i] >= T(0) ? g[i] : slope * g[i];
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::sigmoid(int x) {
  Node n;
  n.kind = OpKind::sigmoid;
  n.shape = nodes_[x].shape;
  n.value.resize(nodes_[x].value.size());
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  const T* xv = nodes_[x].value.data();
  for (size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xv[i]))));
  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T* g = node.grad.data();
    const T* y = node.value.data();
    for (size_t i = 0; i < node.grad.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::tanh(int x) {
  Node n;
  n.kind = OpKind::tanh;
  n.shape = nodes_[x].shape;
  n.value.resize(nodes_[x].value.size());
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  const T* xv = nodes_[x].value.data();
  for (size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = static_cast<T>(std::tanh(static_cast<double>(xv[i])));
  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T* g = node.grad.data();
    const T* y = node.value.data();
    for (size_t i = 0; i < node.grad.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::softmax(int x) {
  const Shape& xs = nodes_[x].shape;
  require(!xs.empty(), ErrorCode::dimension, "softmax: rank must be >= 1");
  const int K = xs.back();
  const int64_t rows = numel(xs) / K;
  Node n;
  n.kind = OpKind::softmax;
  n.shape = xs;
  n.value.resize(nodes_[x].value.size());
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  const T* xv = nodes_[x].value.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* in = xv + r * K;
    T* out = n.value.data() + r * K;
    double mx = static_cast<double>(in[0]);
    for (int i = 1; i < K; ++i) mx = std::max(mx, static_cast<double>(in[i]));
    double z = 0.0;
    for (int i = 0; i < K; ++i) {
      const double e = std::exp(static_cast<double>(in[i]) - mx);
      out[i] = static_cast<T>(e);
      z += e;
    }
    for (int i = 0; i < K; ++i) out[i] = static_cast<T>(static_cast<double>(out[i]) / z);
  }
  n.backward = [K, rows](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T* g = node.grad.data();
    const T* y = node.value.data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* gr = g + r * K;
      const T* yr = y + r * K;
      double dot = 0.0;
      for (int i = 0; i < K; ++i) dot += static_cast<double>(gr[i]) * yr[i];
      T* dst = gx.data() + r * K;
      for (int i = 0; i < K; ++i)
        dst[i] += static_cast<T>(yr[i] * (static_cast<double>(gr[i]) - dot));
    }
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::pool_global_sum(int x) {
  const Shape& xs = nodes_[x].shape;
  require(xs.size() == 4 && xs[2] >= 1 && xs[3] >= 1, ErrorCode::dimension,
          "pool_global_sum: input must be NCHW");
  const int N = xs[0], C = xs[1];
  const int64_t plane = static_cast<int64_t>(xs[2]) * xs[3];
  Node n;
  n.kind = OpKind::pool_global_sum;
  n.shape = {N, C};
  n.value.assign(static_cast<size_t>(N) * C, T(0));
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  const T* xv = nodes_[x].value.data();
  for (int s = 0; s < N; ++s)
    for (int c = 0; c < C; ++c) {
      const T* p = xv + (static_cast<size_t>(s) * C + c) * plane;
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
      n.value[static_cast<size_t>(s) * C + c] = static_cast<T>(acc);
    }
  n.backward = [plane](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T* g = node.grad.data();
    const int N = node.shape[0], C = node.shape[1];
    for (int s = 0; s < N; ++s)
      for (int c = 0; c < C; ++c) {
        const T gv = g[static_cast<size_t>(s) * C + c];
        T* dst = gx.data() + (static_cast<size_t>(s) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) dst[i] += gv;
      }
  };
  return push(std::move(n));
}

// ---- elementwise / structural ---------------------------------------------------

template <typename T>
int Tape<T>::add(int a, int b) {
  require(nodes_[a].shape == nodes_[b].shape, ErrorCode::dimension, "add: shape mismatch");
  Node n;
  n.kind = OpKind::add;
  n.shape = nodes_[a].shape;
  n.value.resize(nodes_[a].value.size());
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  for (size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = nodes_[a].value[i] + nodes_[b].value[i];
  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    t.add_grad(node.inputs[0], node.grad.data(), static_cast<int64_t>(node.grad.size()));
    t.add_grad(node.inputs[1], node.grad.data(), static_cast<int64_t>(node.grad.size()));
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::sub(int a, int b) {
  require(nodes_[a].shape == nodes_[b].shape, ErrorCode::dimension, "sub: shape mismatch");
  Node n;
  n.kind = OpKind::sub;
  n.shape = nodes_[a].shape;
  n.value.resize(nodes_[a].value.size());
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  for (size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = nodes_[a].value[i] - nodes_[b].value[i];
  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    t.add_grad(node.inputs[0], node.grad.data(), static_cast<int64_t>(node.grad.size()));
    if (!t.nodes_[node.inputs[1]].requires_grad) return;
    std::vector<T>& gb = t.grad_buf(node.inputs[1]);
    for (size_t i = 0; i < node.grad.size(); ++i) gb[i] -= node.grad[i];
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::mul(int a, int b) {
  require(nodes_[a].shape == nodes_[b].shape, ErrorCode::dimension, "mul: shape mismatch");
  Node n;
  n.kind = OpKind::mul;
  n.shape = nodes_[a].shape;
  n.value.resize(nodes_[a].value.size());
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  for (size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = nodes_[a].value[i] * nodes_[b].value[i];
  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int a = node.inputs[0], b = node.inputs[1];
    if (t.nodes_[a].requires_grad) {
      std::vector<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * t.nodes_[b].value[i];
    }
    if (t.nodes_[b].requires_grad) {
      std::vector<T>& gb = t.grad_buf(b);
      for (size_t i = 0; i < node.grad.size(); ++i) gb[i] += node.grad[i] * t.nodes_[a].value[i];
    }
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::affine(int x, T scale, T shift) {
  Node n;
  n.kind = OpKind::affine;
  n.shape = nodes_[x].shape;
  n.value.resize(nodes_[x].value.size());
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = scale * nodes_[x].value[i] + shift;
  n.backward = [scale](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    for (size_t i = 0; i < node.grad.size(); ++i) gx[i] += scale * node.grad[i];
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::clamp(int x, T lo, T hi) {
  require(lo < hi, ErrorCode::config, "clamp: lo must be < hi");
  Node n;
  n.kind = OpKind::clamp;
  n.shape = nodes_[x].shape;
  n.value.resize(nodes_[x].value.size());
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  const T* xv = nodes_[x].value.data();
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::min(hi, std::max(lo, xv[i]));
  n.backward = [lo, hi](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T* xv = t.nodes_[x].value.data();
    for (size_t i = 0; i < node.grad.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) gx[i] += node.grad[i];
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::log(int x) {
  Node n;
  n.kind = OpKind::log;
  n.shape = nodes_[x].shape;
  n.value.resize(nodes_[x].value.size());
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  const T* xv = nodes_[x].value.data();
  for (size_t i = 0; i < n.value.size(); ++i) {
    require(xv[i] > T(0), ErrorCode::divergence, "log: non-positive argument");
    n.value[i] = static_cast<T>(std::log(static_cast<double>(xv[i])));
  }
  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T* xv = t.nodes_[x].value.data();
    for (size_t i = 0; i < node.grad.size(); ++i) gx[i] += node.grad[i] / xv[i];
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::sum(int x) {
  Node n;
  n.kind = OpKind::sum;
  n.shape = {1};
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  double acc = 0.0;
  for (T v : nodes_[x].value) acc += static_cast<double>(v);
  n.value = {static_cast<T>(acc)};
  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T g = node.grad[0];
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::mean(int x) {
  const int64_t count = numel(nodes_[x].shape);
  Node n;
  n.kind = OpKind::mean;
  n.shape = {1};
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  double acc = 0.0;
  for (T v : nodes_[x].value) acc += static_cast<double>(v);
  n.value = {static_cast<T>(acc / static_cast<double>(count))};
  n.backward = [count](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    const T g = static_cast<T>(static_cast<double>(node.grad[0]) / static_cast<double>(count));
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::concat(std::span<const int> xs, int axis) {
  require(!xs.empty(), ErrorCode::dimension, "concat: no inputs");
  require(axis == 0 || axis == 1, ErrorCode::config, "concat: axis must be 0 or 1");
  const Shape& first = nodes_[xs[0]].shape;
  Shape out = first;
  bool req = false;
  int total = 0;
  for (int id : xs) {
    const Shape& s = nodes_[id].shape;
    require(s.size() == first.size(), ErrorCode::dimension, "concat: rank mismatch");
    for (size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis)
        require(s[d] == first[d], ErrorCode::dimension, "concat: extent mismatch");
    total += s[axis];
    req = req || nodes_[id].requires_grad;
  }
  out[axis] = total;

  Node n;
  n.kind = OpKind::concat;
  n.shape = out;
  n.value.resize(static_cast<size_t>(numel(out)));
  n.inputs.assign(xs.begin(), xs.end());
  n.requires_grad = req;

  // outer = product of dims before axis, inner = product after
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  int64_t offset = 0;
  for (int id : xs) {
    const int64_t seg = nodes_[id].shape[axis] * inner;
    const T* src = nodes_[id].value.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(src + o * seg, src + (o + 1) * seg,
                n.value.data() + o * (static_cast<int64_t>(total) * inner) + offset);
    offset += seg;
  }

  n.backward = [outer, inner, total](Tape& t, int self) {
    Node& node = t.nodes_[self];
    int64_t offset = 0;
    for (int id : node.inputs) {
      const int64_t seg = static_cast<int64_t>(t.nodes_[id].value.size()) / outer;
      if (t.nodes_[id].requires_grad) {
        std::vector<T>& gx = t.grad_buf(id);
        for (int64_t o = 0; o < outer; ++o) {
          const T* g = node.grad.data() + o * (static_cast<int64_t>(total) * inner) + offset;
          T* dst = gx.data() + o * seg;
          for (int64_t i = 0; i < seg; ++i) dst[i] += g[i];
        }
      }
      offset += seg;
    }
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::narrow0(int x, int start, int len) {
  const Shape& xs = nodes_[x].shape;
  require(!xs.empty(), ErrorCode::dimension, "narrow0: rank must be >= 1");
  require(start >= 0 && len >= 1 && start + len <= xs[0], ErrorCode::dimension,
          "narrow0: slice out of range");
  const int64_t stride = numel(xs) / xs[0];
  Shape out = xs;
  out[0] = len;
  Node n;
  n.kind = OpKind::narrow0;
  n.shape = out;
  n.value.assign(nodes_[x].value.begin() + start * stride,
                 nodes_[x].value.begin() + (start + len) * stride);
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  n.backward = [start, stride](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int x = node.inputs[0];
    if (!t.nodes_[x].requires_grad) return;
    std::vector<T>& gx = t.grad_buf(x);
    T* dst = gx.data() + start * stride;
    for (size_t i = 0; i < node.grad.size(); ++i) dst[i] += node.grad[i];
  };
  return push(std::move(n));
}

template <typename T>
int Tape<T>::reshape(int x, Shape shape) {
  require(numel(shape) == numel(nodes_[x].shape), ErrorCode::dimension,
          "reshape: element count mismatch " + shape_str(nodes_[x].shape) + " -> " +
              shape_str(shape));
  Node n;
  n.kind = OpKind::reshape;
  n.shape = std::move(shape);
  n.value = nodes_[x].value;
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  n.backward = [](Tape& t, int self) {
    Node& node = t.nodes_[self];
    t.add_grad(node.inputs[0], node.grad.data(), static_cast<int64_t>(node.grad.size()));
  };
  return push(std::move(n));
}

// ---- spectral MSE ---------------------------------------------------------------

template <typename T>
int Tape<T>::spectral_mse(int a, int b) {
  const Shape& as = nodes_[a].shape;
  require(as == nodes_[b].shape, ErrorCode::dimension, "spectral_mse: shape mismatch");
  require(as.size() >= 2, ErrorCode::dimension, "spectral_mse: rank must be >= 2");
  const int W = as.back();
  const int H = as[as.size() - 2];
  const int64_t images = numel(as) / (static_cast<int64_t>(H) * W);
  const int64_t total = numel(as);

  // Residual spectra are kept for the adjoint pass.
  auto spectra = std::make_shared<std::vector<ComplexImage>>();
  spectra->reserve(images);
  double acc = 0.0;
  for (int64_t img = 0; img < images; ++img) {
    ComplexImage ca(H, W), cb(H, W);
    const T* pa = nodes_[a].value.data() + img * H * W;
    const T* pb = nodes_[b].value.data() + img * H * W;
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
      ca.data[i] = cplx(static_cast<double>(pa[i]), 0.0);
      cb.data[i] = cplx(static_cast<double>(pb[i]), 0.0);
    }
    ComplexImage fa = fft2c(ca);
    ComplexImage fb = fft2c(cb);
    ComplexImage diff(H, W);
    for (size_t i = 0; i < diff.data.size(); ++i) diff.data[i] = fa.data[i] - fb.data[i];
    for (const cplx& v : diff.data) acc += std::norm(v);
    spectra->push_back(std::move(diff));
  }

  Node n;
  n.kind = OpKind::spectral_mse;
  n.shape = {1};
  n.value = {static_cast<T>(0.5 * acc / static_cast<double>(total))};
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.backward = [spectra = spectra, H, W, total](Tape& t, int self) {
    Node& node = t.nodes_[self];
    const int a = node.inputs[0], b = node.inputs[1];
    const double g = static_cast<double>(node.grad[0]) / static_cast<double>(total);
    const int64_t plane = static_cast<int64_t>(H) * W;
    for (size_t img = 0; img < spectra->size(); ++img) {
      ComplexImage back = ifft2c((*spectra)[img]);
      if (t.nodes_[a].requires_grad) {
        std::vector<T>& ga = t.grad_buf(a);
        T* dst = ga.data() + img * plane;
        for (int64_t i = 0; i < plane; ++i)
          dst[i] += static_cast<T>(g * back.data[i].real());
      }
      if (t.nodes_[b].requires_grad) {
        std::vector<T>& gb = t.grad_buf(b);
        T* dst = gb.data() + img * plane;
        for (int64_t i = 0; i < plane; ++i)
          dst[i] -= static_cast<T>(g * back.data[i].real());
      }
    }
  };
  return push(std::move(n));
}

template class Tape<float>;
template class Tape<double>;

}  // namespace hpalf
