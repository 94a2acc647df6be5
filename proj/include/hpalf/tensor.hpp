#ifndef HPALF_TENSOR_HPP
#define HPALF_TENSOR_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hpalf/common.hpp"

namespace hpalf {

/// Persistent learnable (or frozen) tensor. Lives outside any tape; tapes
/// reference it through leaf nodes and accumulate into `grad`.
template <typename T>
struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = true;

  ParamTensor() = default;
  ParamTensor(std::string n, Shape s, bool req = true)
      : name(std::move(n)),
        shape(std::move(s)),
        value(static_cast<size_t>(numel(shape)), T(0)),
        grad(static_cast<size_t>(numel(shape)), T(0)),
        requires_grad(req) {}

  int64_t size() const { return numel(shape); }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  // Fan-in scaled uniform init in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
  void init_fan_in(Rng& rng, int fan_in) {
    double b = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
    for (auto& v : value) v = static_cast<T>(rng.uniform(-b, b));
  }

  void fill(T v) { std::fill(value.begin(), value.end(), v); }

  void check_finite() const {
    for (T v : value)
      if (!std::isfinite(static_cast<double>(v)))
        throw Error(ErrorCode::numeric, "non-finite value in tensor '" + name + "'");
  }
};

enum class BatchNormMode { train, eval };

enum class OpKind {
  leaf,
  constant,
  input,
  conv2d,
  conv_transpose2d,
  dense,
  batchnorm2d,
  leaky_relu,
  sigmoid,
  tanh,
  softmax,
  pool_global_sum,
  add,
  sub,
  mul,
  affine,
  clamp,
  log,
  sum,
  mean,
  concat,
  narrow0,
  reshape,
  spectral_mse
};

/// Reverse-mode tape. Nodes are appended in execution order, which makes the
/// recorded graph topologically sorted by construction; backward() walks node
/// ids in reverse exactly once. A tape is built and differentiated by a single
/// thread; finished tapes are read-only.
template <typename T>
class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::input;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated during backward
    std::vector<int> inputs;
    std::function<void(Tape&, int)> backward;
    ParamTensor<T>* param = nullptr;
    bool requires_grad = false;
  };

  // --- node creation -------------------------------------------------------
  int leaf(ParamTensor<T>& p);
  int constant(Shape shape, std::vector<T> value);
  int input(Shape shape, std::vector<T> value, bool requires_grad = false);

  // --- layer vocabulary ----------------------------------------------------
  // x: (N,I,H,W), w: (O,I,k,k), b: (O). Output extent must divide exactly.
  int conv2d(int x, int w, int b, int stride, int padding);
  // x: (N,O,H,W), w: (O,I,k,k), b: (I). Forward equals the backward-input
  // pass of conv2d with the same weight.
  int conv_transpose2d(int x, int w, int b, int stride, int padding);
  // x: (N,In), w: (Out,In), b: (Out)
  int dense(int x, int w, int b);
  // x: (N,C,H,W); gamma/beta: (C); running stats are external per-layer
  // buffers, updated in train mode only.
  int batchnorm2d(int x, int gamma, int beta, BatchNormMode mode, std::vector<T>* running_mean,
                  std::vector<T>* running_var, T momentum, T eps);
  int leaky_relu(int x, T slope);
  int sigmoid(int x);
  int tanh(int x);
  int softmax(int x);  // over the last axis
  int pool_global_sum(int x);  // (N,C,H,W) -> (N,C)

  // --- elementwise / structural --------------------------------------------
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int affine(int x, T scale, T shift);  // scale * x + shift
  int clamp(int x, T lo, T hi);
  int log(int x);
  int sum(int x);   // -> scalar (1)
  int mean(int x);  // -> scalar (1)
  int concat(std::span<const int> xs, int axis);  // axis 0 or 1, rank-4 inputs
  int narrow0(int x, int start, int len);
  int reshape(int x, Shape shape);

  // 0.5 * mean_bins |fft2c(a) - fft2c(b)|^2, both inputs (...,H,W) real,
  // H and W powers of two. Scalar output.
  int spectral_mse(int a, int b);

  // --- access ---------------------------------------------------------------
  // by value: the node array reallocates as ops append
  Shape shape(int id) const { return nodes_[id].shape; }
  std::span<const T> value(int id) const { return nodes_[id].value; }
  std::span<const T> grad(int id) const { return nodes_[id].grad; }
  T scalar(int id) const;
  size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar root. Node grads are freshly zeroed per call;
  /// ParamTensor grads accumulate across calls (callers zero them per batch).
  void backward(int root);

 private:
  int push(Node n);
  std::vector<T>& grad_buf(int id);
  void add_grad(int id, const T* g, int64_t n);

  std::vector<Node> nodes_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace hpalf

#endif  // HPALF_TENSOR_HPP
