#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hanerf/tensor.hpp"

namespace hanerf {

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense tensors. The graph is rebuilt every training
// step; backward() walks the recorded ops once, accumulating gradients into
// per-node buffers. Single-threaded; heavy lifting happens inside GEMM.
//
// Supported primitives: affine maps, 3x3 convolutions, ReLU, sigmoid,
// softplus, sin/cos, exp, elementwise arithmetic, reductions, gather, and a
// fused volume-rendering quadrature op.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----
  Var constant(Tensor<T> v);
  // Caller keeps the tensor alive for the tape's lifetime.
  Var constant_view(const Tensor<T>* v);
  // Trainable leaf. Deduplicated by pointer, so one parameter used in
  // several subgraphs accumulates a single gradient.
  Var param(const std::string& name, const Tensor<T>* v);

  // ---- elementwise ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var axpb(Var x, T a, T b);  // a*x + b
  Var relu(Var x);
  Var sigmoid(Var x);
  Var softplus(Var x);
  Var exp_op(Var x);
  Var sin_op(Var x);
  Var cos_op(Var x);
  Var square(Var x);
  Var abs_op(Var x);
  Var reshape(Var x, Shape s);  // same element count, new shape

  // ---- linear algebra ----
  // x:[M,K] w:[K,N] b:[N] -> [M,N]; pass invalid b for no bias.
  Var affine(Var x, Var w, Var b);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var gather_rows(Var table, std::vector<int64_t> idx);

  // ---- reductions ----
  Var sum(Var x);        // -> [1]
  Var mean(Var x);       // -> [1]
  Var sum_axis1(Var x);  // [M,N] -> [M]

  // ---- convolution stack (NCHW, 3x3 kernels) ----
  // x:[N,C,H,W] w:[Cout, C*9] b:[Cout]
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  Var global_avg_pool(Var x);              // [N,C,H,W] -> [N,C]
  Var image_from_rows(Var rows, int64_t h, int64_t w);  // [H*W,3] -> [1,3,H,W]

  // ---- volume rendering quadrature ----
  // sigma:[R*K] rgb:[R*K,3] deltas:[R*K], samples ray-major. Returns per-ray
  // color [R,3]. Per-sample weights and final transmittance are exposed as
  // detached snapshots (no gradient flows through them).
  Var composite(Var sigma, Var rgb, const Tensor<T>& deltas, int64_t rays,
                int64_t samples, Tensor<T>* weights_out = nullptr,
                Tensor<T>* transmittance_out = nullptr);

  // ---- execution ----
  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. loss must be
  // a scalar. Callable once per tape.
  void backward(Var loss);

  const Tensor<T>& value(Var v) const { return val(v.id); }
  bool has_grad(Var v) const;
  const Tensor<T>& grad(Var v) const;

  struct ParamGrad {
    std::string name;
    const Tensor<T>* grad;  // null when the parameter never received one
  };
  std::vector<ParamGrad> param_grads() const;

  size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor<T> own;
    const Tensor<T>* ext = nullptr;
    bool needs_grad = false;
    bool grad_ready = false;
    Tensor<T> grad;
    std::function<void()> back;  // null for leaves
    std::string param_name;      // non-empty for trainable leaves
  };

  const Tensor<T>& val(int32_t id) const {
    const Entry& e = entries_[static_cast<size_t>(id)];
    return e.ext ? *e.ext : e.own;
  }
  Tensor<T>& grad_buf(int32_t id);
  void add_grad(int32_t id, const Tensor<T>& g);
  Var push(Tensor<T> value, bool needs_grad, std::function<void()> back);
  void check(Var v) const;

  std::vector<Entry> entries_;
  std::unordered_map<const void*, int32_t> param_index_;
  bool backward_done_ = false;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace hanerf
