#include "hanerf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "hanerf/blas.hpp"
#include "hanerf/errors.hpp"

namespace hanerf {

namespace {

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

// softplus(x) = max(x,0) + log1p(exp(-|x|))
template <class T>
T stable_softplus(T x) {
  T m = x > T(0) ? x : T(0);
  return m + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

template <class T>
void Tape<T>::check(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= entries_.size())
    throw ConfigError("invalid tape variable");
}

template <class T>
Var Tape<T>::push(Tensor<T> value, bool needs_grad,
                  std::function<void()> back) {
  Entry e;
  e.own = std::move(value);
  e.needs_grad = needs_grad;
  e.back = needs_grad ? std::move(back) : nullptr;
  entries_.push_back(std::move(e));
  return Var{static_cast<int32_t>(entries_.size() - 1)};
}

template <class T>
Var Tape<T>::constant(Tensor<T> v) {
  return push(std::move(v), false, nullptr);
}

template <class T>
Var Tape<T>::constant_view(const Tensor<T>* v) {
  Entry e;
  e.ext = v;
  entries_.push_back(std::move(e));
  return Var{static_cast<int32_t>(entries_.size() - 1)};
}

template <class T>
Var Tape<T>::param(const std::string& name, const Tensor<T>* v) {
  auto it = param_index_.find(v);
  if (it != param_index_.end()) return Var{it->second};
  Entry e;
  e.ext = v;
  e.needs_grad = true;
  e.param_name = name;
  entries_.push_back(std::move(e));
  int32_t id = static_cast<int32_t>(entries_.size() - 1);
  param_index_[v] = id;
  return Var{id};
}

template <class T>
Tensor<T>& Tape<T>::grad_buf(int32_t id) {
  Entry& e = entries_[static_cast<size_t>(id)];
  if (!e.grad_ready) {
    e.grad = Tensor<T>::zeros(val(id).shape);
    e.grad_ready = true;
  }
  return e.grad;
}

template <class T>
void Tape<T>::add_grad(int32_t id, const Tensor<T>& g) {
  Tensor<T>& buf = grad_buf(id);
  if (buf.shape != g.shape)
    throw ConfigError("gradient shape mismatch: " + shape_str(buf.shape) +
                      " vs " + shape_str(g.shape));
  T* d = buf.ptr();
  const T* s = g.ptr();
  for (int64_t i = 0, n = g.numel(); i < n; ++i) d[i] += s[i];
}

// ---------------------------------------------------------------- elementwise

template <class T>
Var Tape<T>::add(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<T>& x = val(a.id);
  const Tensor<T>& y = val(b.id);
  if (x.shape != y.shape) throw ConfigError("add: shape mismatch");
  Tensor<T> out(x.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
  bool ng = entries_[a.id].needs_grad || entries_[b.id].needs_grad;
  int32_t ia = a.id, ib = b.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ia, ib, io] {
      const Tensor<T>& g = entries_[io].grad;
      if (entries_[ia].needs_grad) add_grad(ia, g);
      if (entries_[ib].needs_grad) add_grad(ib, g);
    };
  return o;
}

template <class T>
Var Tape<T>::sub(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<T>& x = val(a.id);
  const Tensor<T>& y = val(b.id);
  if (x.shape != y.shape) throw ConfigError("sub: shape mismatch");
  Tensor<T> out(x.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] - y[i];
  bool ng = entries_[a.id].needs_grad || entries_[b.id].needs_grad;
  int32_t ia = a.id, ib = b.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ia, ib, io] {
      const Tensor<T>& g = entries_[io].grad;
      if (entries_[ia].needs_grad) add_grad(ia, g);
      if (entries_[ib].needs_grad) {
        Tensor<T> neg(g.shape);
        for (int64_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
        add_grad(ib, neg);
      }
    };
  return o;
}

template <class T>
Var Tape<T>::mul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<T>& x = val(a.id);
  const Tensor<T>& y = val(b.id);
  if (x.shape != y.shape) throw ConfigError("mul: shape mismatch");
  Tensor<T> out(x.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  bool ng = entries_[a.id].needs_grad || entries_[b.id].needs_grad;
  int32_t ia = a.id, ib = b.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ia, ib, io] {
      const Tensor<T>& g = entries_[io].grad;
      if (entries_[ia].needs_grad) {
        const Tensor<T>& y2 = val(ib);
        Tensor<T> gx(g.shape);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * y2[i];
        add_grad(ia, gx);
      }
      if (entries_[ib].needs_grad) {
        const Tensor<T>& x2 = val(ia);
        Tensor<T> gy(g.shape);
        for (int64_t i = 0; i < g.numel(); ++i) gy[i] = g[i] * x2[i];
        add_grad(ib, gy);
      }
    };
  return o;
}

template <class T>
Var Tape<T>::axpb(Var x, T a, T b) {
  check(x);
  const Tensor<T>& v = val(x.id);
  Tensor<T> out(v.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * v[i] + b;
  bool ng = entries_[x.id].needs_grad;
  int32_t ix = x.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ix, io, a] {
      const Tensor<T>& g = entries_[io].grad;
      Tensor<T> gx(g.shape);
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] = a * g[i];
      add_grad(ix, gx);
    };
  return o;
}

// Unary ops share this pattern: fwd computes the value, bwd multiplies the
// incoming gradient by the local derivative, which may look at the saved
// input (ix) or output (io).
#define HANERF_UNARY(NAME, FWD_EXPR, BWD_EXPR)                          \
  template <class T>                                                    \
  Var Tape<T>::NAME(Var xv) {                                           \
    check(xv);                                                          \
    const Tensor<T>& in = val(xv.id);                                   \
    Tensor<T> out(in.shape);                                            \
    for (int64_t i = 0; i < out.numel(); ++i) {                         \
      T x = in[i];                                                      \
      (void)x;                                                          \
      out[i] = (FWD_EXPR);                                              \
    }                                                                   \
    bool ng = entries_[xv.id].needs_grad;                               \
    int32_t ix = xv.id;                                                 \
    Var o = push(std::move(out), ng, nullptr);                          \
    int32_t io = o.id;                                                  \
    if (ng)                                                             \
      entries_[io].back = [this, ix, io] {                              \
        const Tensor<T>& g = entries_[io].grad;                         \
        const Tensor<T>& in2 = val(ix);                                 \
        const Tensor<T>& out2 = val(io);                                \
        (void)in2;                                                      \
        (void)out2;                                                     \
        Tensor<T> gx(g.shape);                                          \
        for (int64_t i = 0; i < g.numel(); ++i) {                       \
          T x = in2[i], y = out2[i];                                    \
          (void)x;                                                      \
          (void)y;                                                      \
          gx[i] = g[i] * (BWD_EXPR);                                    \
        }                                                               \
        add_grad(ix, gx);                                               \
      };                                                                \
    return o;                                                           \
  }

HANERF_UNARY(relu, x > T(0) ? x : T(0), y > T(0) ? T(1) : T(0))
HANERF_UNARY(sigmoid, stable_sigmoid(x), y * (T(1) - y))
HANERF_UNARY(softplus, stable_softplus(x), stable_sigmoid(x))
HANERF_UNARY(exp_op, std::exp(x), y)
HANERF_UNARY(sin_op, std::sin(x), std::cos(x))
HANERF_UNARY(cos_op, std::cos(x), -std::sin(x))
HANERF_UNARY(square, x* x, T(2) * x)
HANERF_UNARY(abs_op, std::abs(x), x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)))

#undef HANERF_UNARY

template <class T>
Var Tape<T>::reshape(Var x, Shape s) {
  check(x);
  const Tensor<T>& v = val(x.id);
  if (shape_numel(s) != v.numel())
    throw ConfigError("reshape: element count mismatch " + shape_str(v.shape) +
                      " -> " + shape_str(s));
  Tensor<T> out(s);
  std::copy(v.ptr(), v.ptr() + v.numel(), out.ptr());
  bool ng = entries_[x.id].needs_grad;
  int32_t ix = x.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ix, io] {
      const Tensor<T>& g = entries_[io].grad;
      Tensor<T> gx(val(ix).shape);
      std::copy(g.ptr(), g.ptr() + g.numel(), gx.ptr());
      add_grad(ix, gx);
    };
  return o;
}

// ------------------------------------------------------------- linear algebra

template <class T>
Var Tape<T>::affine(Var x, Var w, Var b) {
  check(x);
  check(w);
  const Tensor<T>& xv = val(x.id);
  const Tensor<T>& wv = val(w.id);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[0])
    throw ConfigError("affine: incompatible shapes " + shape_str(xv.shape) +
                      " x " + shape_str(wv.shape));
  int64_t m = xv.shape[0], k = xv.shape[1], n = wv.shape[1];
  Tensor<T> out({m, n});
  detail::gemm(false, false, m, n, k, T(1), xv.ptr(), k, wv.ptr(), n, T(0),
               out.ptr(), n);
  if (b.valid()) {
    check(b);
    const Tensor<T>& bv = val(b.id);
    if (bv.numel() != n) throw ConfigError("affine: bias size mismatch");
    for (int64_t r = 0; r < m; ++r) {
      T* row = out.ptr() + r * n;
      for (int64_t c = 0; c < n; ++c) row[c] += bv[c];
    }
  }
  bool ng = entries_[x.id].needs_grad || entries_[w.id].needs_grad ||
            (b.valid() && entries_[b.id].needs_grad);
  int32_t ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ix, iw, ib, io, m, k, n] {
      const Tensor<T>& g = entries_[io].grad;
      if (entries_[ix].needs_grad) {
        // dX = dY * W^T
        Tensor<T> gx({m, k});
        detail::gemm(false, true, m, k, n, T(1), g.ptr(), n, val(iw).ptr(), n,
                     T(0), gx.ptr(), k);
        add_grad(ix, gx);
      }
      if (entries_[iw].needs_grad) {
        // dW = X^T * dY
        Tensor<T> gw({k, n});
        detail::gemm(true, false, k, n, m, T(1), val(ix).ptr(), k, g.ptr(), n,
                     T(0), gw.ptr(), n);
        add_grad(iw, gw);
      }
      if (ib >= 0 && entries_[ib].needs_grad) {
        Tensor<T> gb(val(ib).shape);
        for (int64_t r = 0; r < m; ++r) {
          const T* row = g.ptr() + r * n;
          for (int64_t c = 0; c < n; ++c) gb[c] += row[c];
        }
        add_grad(ib, gb);
      }
    };
  return o;
}

template <class T>
Var Tape<T>::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: empty");
  int64_t m = -1, total = 0;
  bool ng = false;
  for (Var p : parts) {
    check(p);
    const Tensor<T>& v = val(p.id);
    if (v.rank() != 2) throw ConfigError("concat_cols: rank != 2");
    if (m < 0) m = v.shape[0];
    if (v.shape[0] != m) throw ConfigError("concat_cols: row mismatch");
    total += v.shape[1];
    ng = ng || entries_[p.id].needs_grad;
  }
  Tensor<T> out({m, total});
  int64_t off = 0;
  for (Var p : parts) {
    const Tensor<T>& v = val(p.id);
    int64_t w = v.shape[1];
    for (int64_t r = 0; r < m; ++r)
      std::copy(v.ptr() + r * w, v.ptr() + (r + 1) * w,
                out.ptr() + r * total + off);
    off += w;
  }
  std::vector<int32_t> ids;
  for (Var p : parts) ids.push_back(p.id);
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ids, io, m, total] {
      const Tensor<T>& g = entries_[io].grad;
      int64_t off2 = 0;
      for (int32_t id : ids) {
        const Tensor<T>& v = val(id);
        int64_t w = v.shape[1];
        if (entries_[id].needs_grad) {
          Tensor<T> gp({m, w});
          for (int64_t r = 0; r < m; ++r)
            std::copy(g.ptr() + r * total + off2, g.ptr() + r * total + off2 + w,
                      gp.ptr() + r * w);
          add_grad(id, gp);
        }
        off2 += w;
      }
    };
  return o;
}

template <class T>
Var Tape<T>::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_rows: empty");
  int64_t n = -1, total = 0;
  bool ng = false;
  for (Var p : parts) {
    check(p);
    const Tensor<T>& v = val(p.id);
    if (v.rank() != 2) throw ConfigError("concat_rows: rank != 2");
    if (n < 0) n = v.shape[1];
    if (v.shape[1] != n) throw ConfigError("concat_rows: column mismatch");
    total += v.shape[0];
    ng = ng || entries_[p.id].needs_grad;
  }
  Tensor<T> out({total, n});
  int64_t off = 0;
  for (Var p : parts) {
    const Tensor<T>& v = val(p.id);
    std::copy(v.ptr(), v.ptr() + v.numel(), out.ptr() + off * n);
    off += v.shape[0];
  }
  std::vector<int32_t> ids;
  for (Var p : parts) ids.push_back(p.id);
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ids, io, n] {
      const Tensor<T>& g = entries_[io].grad;
      int64_t off2 = 0;
      for (int32_t id : ids) {
        const Tensor<T>& v = val(id);
        if (entries_[id].needs_grad) {
          Tensor<T> gp(v.shape);
          std::copy(g.ptr() + off2 * n, g.ptr() + off2 * n + v.numel(),
                    gp.ptr());
          add_grad(id, gp);
        }
        off2 += v.shape[0];
      }
    };
  return o;
}

template <class T>
Var Tape<T>::gather_rows(Var table, std::vector<int64_t> idx) {
  check(table);
  const Tensor<T>& t = val(table.id);
  if (t.rank() != 2) throw ConfigError("gather_rows: table rank != 2");
  int64_t rows = t.shape[0], d = t.shape[1];
  for (int64_t i : idx)
    if (i < 0 || i >= rows) throw InputError("gather_rows: index out of range");
  int64_t m = static_cast<int64_t>(idx.size());
  Tensor<T> out({m, d});
  for (int64_t r = 0; r < m; ++r)
    std::copy(t.ptr() + idx[r] * d, t.ptr() + (idx[r] + 1) * d,
              out.ptr() + r * d);
  bool ng = entries_[table.id].needs_grad;
  int32_t it = table.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, it, io, idx = std::move(idx), d] {
      const Tensor<T>& g = entries_[io].grad;
      Tensor<T>& gt = grad_buf(it);
      // Serial scatter keeps accumulation order fixed.
      for (size_t r = 0; r < idx.size(); ++r) {
        T* dst = gt.ptr() + idx[r] * d;
        const T* src = g.ptr() + static_cast<int64_t>(r) * d;
        for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    };
  return o;
}

// ------------------------------------------------------------------ reductions

template <class T>
Var Tape<T>::sum(Var x) {
  check(x);
  const Tensor<T>& v = val(x.id);
  T acc = 0;
  for (int64_t i = 0; i < v.numel(); ++i) acc += v[i];
  bool ng = entries_[x.id].needs_grad;
  int32_t ix = x.id;
  Var o = push(Tensor<T>::from({1}, {acc}), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ix, io] {
      T g = entries_[io].grad[0];
      Tensor<T> gx(val(ix).shape, g);
      add_grad(ix, gx);
    };
  return o;
}

template <class T>
Var Tape<T>::mean(Var x) {
  check(x);
  const Tensor<T>& v = val(x.id);
  if (v.numel() == 0) throw ConfigError("mean of empty tensor");
  T inv = T(1) / static_cast<T>(v.numel());
  T acc = 0;
  for (int64_t i = 0; i < v.numel(); ++i) acc += v[i];
  acc *= inv;
  bool ng = entries_[x.id].needs_grad;
  int32_t ix = x.id;
  Var o = push(Tensor<T>::from({1}, {acc}), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ix, io, inv] {
      T g = entries_[io].grad[0] * inv;
      Tensor<T> gx(val(ix).shape, g);
      add_grad(ix, gx);
    };
  return o;
}

template <class T>
Var Tape<T>::sum_axis1(Var x) {
  check(x);
  const Tensor<T>& v = val(x.id);
  if (v.rank() != 2) throw ConfigError("sum_axis1: rank != 2");
  int64_t m = v.shape[0], n = v.shape[1];
  Tensor<T> out({m});
  for (int64_t r = 0; r < m; ++r) {
    T acc = 0;
    const T* row = v.ptr() + r * n;
    for (int64_t c = 0; c < n; ++c) acc += row[c];
    out[r] = acc;
  }
  bool ng = entries_[x.id].needs_grad;
  int32_t ix = x.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ix, io, m, n] {
      const Tensor<T>& g = entries_[io].grad;
      Tensor<T> gx({m, n});
      for (int64_t r = 0; r < m; ++r) {
        T gr = g[r];
        T* row = gx.ptr() + r * n;
        for (int64_t c = 0; c < n; ++c) row[c] = gr;
      }
      add_grad(ix, gx);
    };
  return o;
}

// ----------------------------------------------------------------- convolution

namespace {

struct ConvDims {
  int64_t batch, cin, h, w, cout, oh, ow;
  int stride, pad;
};

template <class T>
void im2col3x3(const Tensor<T>& x, const ConvDims& d, Tensor<T>& col) {
  // col: [batch*oh*ow, cin*9]
  const int64_t cols = d.cin * 9;
  for (int64_t nidx = 0; nidx < d.batch; ++nidx) {
    for (int64_t oy = 0; oy < d.oh; ++oy) {
      for (int64_t ox = 0; ox < d.ow; ++ox) {
        T* row = col.ptr() + ((nidx * d.oh + oy) * d.ow + ox) * cols;
        for (int64_t c = 0; c < d.cin; ++c) {
          const T* plane = x.ptr() + (nidx * d.cin + c) * d.h * d.w;
          for (int ky = 0; ky < 3; ++ky) {
            int64_t sy = oy * d.stride - d.pad + ky;
            for (int kx = 0; kx < 3; ++kx) {
              int64_t sx = ox * d.stride - d.pad + kx;
              T v = T(0);
              if (sy >= 0 && sy < d.h && sx >= 0 && sx < d.w)
                v = plane[sy * d.w + sx];
              row[c * 9 + ky * 3 + kx] = v;
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im3x3(const Tensor<T>& col, const ConvDims& d, Tensor<T>& gx) {
  const int64_t cols = d.cin * 9;
  for (int64_t nidx = 0; nidx < d.batch; ++nidx) {
    for (int64_t oy = 0; oy < d.oh; ++oy) {
      for (int64_t ox = 0; ox < d.ow; ++ox) {
        const T* row = col.ptr() + ((nidx * d.oh + oy) * d.ow + ox) * cols;
        for (int64_t c = 0; c < d.cin; ++c) {
          T* plane = gx.ptr() + (nidx * d.cin + c) * d.h * d.w;
          for (int ky = 0; ky < 3; ++ky) {
            int64_t sy = oy * d.stride - d.pad + ky;
            if (sy < 0 || sy >= d.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int64_t sx = ox * d.stride - d.pad + kx;
              if (sx < 0 || sx >= d.w) continue;
              plane[sy * d.w + sx] += row[c * 9 + ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Var Tape<T>::conv2d(Var x, Var w, Var b, int stride, int pad) {
  check(x);
  check(w);
  check(b);
  const Tensor<T>& xv = val(x.id);
  const Tensor<T>& wv = val(w.id);
  const Tensor<T>& bv = val(b.id);
  if (xv.rank() != 4) throw ConfigError("conv2d: input rank != 4");
  if (wv.rank() != 2 || wv.shape[1] != xv.shape[1] * 9)
    throw ConfigError("conv2d: weight must be [cout, cin*9]");
  ConvDims d;
  d.batch = xv.shape[0];
  d.cin = xv.shape[1];
  d.h = xv.shape[2];
  d.w = xv.shape[3];
  d.cout = wv.shape[0];
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h + 2 * pad - 3) / stride + 1;
  d.ow = (d.w + 2 * pad - 3) / stride + 1;
  if (d.oh < 1 || d.ow < 1) throw InputError("conv2d: input too small");
  if (bv.numel() != d.cout) throw ConfigError("conv2d: bias size mismatch");

  int64_t m = d.batch * d.oh * d.ow;
  int64_t kdim = d.cin * 9;
  Tensor<T> col({m, kdim});
  im2col3x3(xv, d, col);
  Tensor<T> ym({m, d.cout});
  // ym = col * w^T
  detail::gemm(false, true, m, d.cout, kdim, T(1), col.ptr(), kdim, wv.ptr(),
               kdim, T(0), ym.ptr(), d.cout);
  Tensor<T> out({d.batch, d.cout, d.oh, d.ow});
  for (int64_t nidx = 0; nidx < d.batch; ++nidx)
    for (int64_t oy = 0; oy < d.oh; ++oy)
      for (int64_t ox = 0; ox < d.ow; ++ox) {
        const T* src = ym.ptr() + ((nidx * d.oh + oy) * d.ow + ox) * d.cout;
        for (int64_t co = 0; co < d.cout; ++co)
          out.ptr()[((nidx * d.cout + co) * d.oh + oy) * d.ow + ox] =
              src[co] + bv[co];
      }

  bool ng = entries_[x.id].needs_grad || entries_[w.id].needs_grad ||
            entries_[b.id].needs_grad;
  int32_t ix = x.id, iw = w.id, ib = b.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ix, iw, ib, io, d, m, kdim] {
      const Tensor<T>& g = entries_[io].grad;
      // Permute gradient to [m, cout].
      Tensor<T> gm({m, d.cout});
      for (int64_t nidx = 0; nidx < d.batch; ++nidx)
        for (int64_t oy = 0; oy < d.oh; ++oy)
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            T* dst = gm.ptr() + ((nidx * d.oh + oy) * d.ow + ox) * d.cout;
            for (int64_t co = 0; co < d.cout; ++co)
              dst[co] =
                  g.ptr()[((nidx * d.cout + co) * d.oh + oy) * d.ow + ox];
          }
      if (entries_[ib].needs_grad) {
        Tensor<T> gb({d.cout});
        for (int64_t r = 0; r < m; ++r) {
          const T* row = gm.ptr() + r * d.cout;
          for (int64_t co = 0; co < d.cout; ++co) gb[co] += row[co];
        }
        add_grad(ib, gb);
      }
      // The column matrix is rebuilt from the saved input instead of being
      // kept alive between forward and backward.
      if (entries_[iw].needs_grad || entries_[ix].needs_grad) {
        Tensor<T> col({m, kdim});
        im2col3x3(val(ix), d, col);
        if (entries_[iw].needs_grad) {
          Tensor<T> gw({d.cout, kdim});
          detail::gemm(true, false, d.cout, kdim, m, T(1), gm.ptr(), d.cout,
                       col.ptr(), kdim, T(0), gw.ptr(), kdim);
          add_grad(iw, gw);
        }
        if (entries_[ix].needs_grad) {
          Tensor<T> gcol({m, kdim});
          detail::gemm(false, false, m, kdim, d.cout, T(1), gm.ptr(), d.cout,
                       val(iw).ptr(), kdim, T(0), gcol.ptr(), kdim);
          Tensor<T> gx(val(ix).shape);
          col2im3x3(gcol, d, gx);
          add_grad(ix, gx);
        }
      }
    };
  return o;
}

template <class T>
Var Tape<T>::global_avg_pool(Var x) {
  check(x);
  const Tensor<T>& v = val(x.id);
  if (v.rank() != 4) throw ConfigError("global_avg_pool: rank != 4");
  int64_t n = v.shape[0], c = v.shape[1], hw = v.shape[2] * v.shape[3];
  Tensor<T> out({n, c});
  T inv = T(1) / static_cast<T>(hw);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T* plane = v.ptr() + (i * c + j) * hw;
      T acc = 0;
      for (int64_t p = 0; p < hw; ++p) acc += plane[p];
      out.at2(i, j) = acc * inv;
    }
  bool ng = entries_[x.id].needs_grad;
  int32_t ix = x.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ix, io, n, c, hw, inv] {
      const Tensor<T>& g = entries_[io].grad;
      Tensor<T> gx(val(ix).shape);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) {
          T gv = g.at2(i, j) * inv;
          T* plane = gx.ptr() + (i * c + j) * hw;
          for (int64_t p = 0; p < hw; ++p) plane[p] = gv;
        }
      add_grad(ix, gx);
    };
  return o;
}

template <class T>
Var Tape<T>::image_from_rows(Var rows, int64_t h, int64_t w) {
  check(rows);
  const Tensor<T>& v = val(rows.id);
  if (v.rank() != 2 || v.shape[0] != h * w || v.shape[1] != 3)
    throw ConfigError("image_from_rows: expected [h*w,3]");
  Tensor<T> out({1, 3, h, w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t p = 0; p < h * w; ++p)
      out.ptr()[c * h * w + p] = v.ptr()[p * 3 + c];
  bool ng = entries_[rows.id].needs_grad;
  int32_t ir = rows.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, ir, io, h, w] {
      const Tensor<T>& g = entries_[io].grad;
      Tensor<T> gr({h * w, 3});
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t p = 0; p < h * w; ++p)
          gr.ptr()[p * 3 + c] = g.ptr()[c * h * w + p];
      add_grad(ir, gr);
    };
  return o;
}

// ------------------------------------------------------------------ composite

template <class T>
Var Tape<T>::composite(Var sigma, Var rgb, const Tensor<T>& deltas,
                       int64_t rays, int64_t samples, Tensor<T>* weights_out,
                       Tensor<T>* transmittance_out) {
  check(sigma);
  check(rgb);
  const Tensor<T>& sv = val(sigma.id);
  const Tensor<T>& cv = val(rgb.id);
  int64_t b = rays * samples;
  if (sv.numel() != b) throw ConfigError("composite: sigma size mismatch");
  if (cv.rank() != 2 || cv.shape[0] != b || cv.shape[1] != 3)
    throw ConfigError("composite: rgb must be [rays*samples,3]");
  if (deltas.numel() != b) throw ConfigError("composite: delta size mismatch");

  Tensor<T> out({rays, 3});
  // Saved per-sample state for backward: prefix transmittance T_k,
  // survival factor e_k = exp(-sigma_k delta_k), and weight w_k.
  auto trans = std::make_shared<Tensor<T>>(Shape{b});
  auto surv = std::make_shared<Tensor<T>>(Shape{b});
  auto weights = std::make_shared<Tensor<T>>(Shape{b});
  auto dts = std::make_shared<Tensor<T>>(deltas);
  Tensor<T> final_trans({rays});
  for (int64_t r = 0; r < rays; ++r) {
    T t = T(1);
    T acc[3] = {0, 0, 0};
    for (int64_t k = 0; k < samples; ++k) {
      int64_t i = r * samples + k;
      T e = std::exp(-sv[i] * (*dts)[i]);
      T alpha = T(1) - e;
      T wgt = t * alpha;
      (*trans)[i] = t;
      (*surv)[i] = e;
      (*weights)[i] = wgt;
      const T* c = cv.ptr() + i * 3;
      acc[0] += wgt * c[0];
      acc[1] += wgt * c[1];
      acc[2] += wgt * c[2];
      t *= e;
    }
    out.at2(r, 0) = acc[0];
    out.at2(r, 1) = acc[1];
    out.at2(r, 2) = acc[2];
    final_trans[r] = t;
  }
  if (weights_out) *weights_out = *weights;
  if (transmittance_out) *transmittance_out = final_trans;

  bool ng = entries_[sigma.id].needs_grad || entries_[rgb.id].needs_grad;
  int32_t is = sigma.id, ic = rgb.id;
  Var o = push(std::move(out), ng, nullptr);
  int32_t io = o.id;
  if (ng)
    entries_[io].back = [this, is, ic, io, rays, samples, trans, surv, weights,
                         dts] {
      const Tensor<T>& g = entries_[io].grad;  // [rays,3]
      const Tensor<T>& cv2 = val(ic);
      bool want_sigma = entries_[is].needs_grad;
      bool want_rgb = entries_[ic].needs_grad;
      Tensor<T> gs, gc;
      if (want_sigma) gs = Tensor<T>::zeros(val(is).shape);
      if (want_rgb) gc = Tensor<T>::zeros(val(ic).shape);
      for (int64_t r = 0; r < rays; ++r) {
        const T* gr = g.ptr() + r * 3;
        if (want_rgb) {
          for (int64_t k = 0; k < samples; ++k) {
            int64_t i = r * samples + k;
            T wgt = (*weights)[i];
            T* dst = gc.ptr() + i * 3;
            dst[0] = wgt * gr[0];
            dst[1] = wgt * gr[1];
            dst[2] = wgt * gr[2];
          }
        }
        if (want_sigma) {
          // d w_k / d sigma_k   =  delta_k T_k e_k
          // d w_j / d sigma_k   = -delta_k w_j        (j > k)
          T suffix = T(0);
          for (int64_t k = samples - 1; k >= 0; --k) {
            int64_t i = r * samples + k;
            const T* c = cv2.ptr() + i * 3;
            T gw = gr[0] * c[0] + gr[1] * c[1] + gr[2] * c[2];
            gs[i] = (*dts)[i] * ((*trans)[i] * (*surv)[i] * gw - suffix);
            suffix += gw * (*weights)[i];
          }
        }
      }
      if (want_sigma) add_grad(is, gs);
      if (want_rgb) add_grad(ic, gc);
    };
  return o;
}

// ------------------------------------------------------------------- backward

template <class T>
void Tape<T>::backward(Var loss) {
  check(loss);
  if (backward_done_) throw ConfigError("backward already ran on this tape");
  backward_done_ = true;
  if (val(loss.id).numel() != 1)
    throw ConfigError("backward: loss must be scalar");
  if (!entries_[loss.id].needs_grad) return;  // nothing trainable upstream
  grad_buf(loss.id).fill(T(1));
  for (int32_t i = loss.id; i >= 0; --i) {
    Entry& e = entries_[static_cast<size_t>(i)];
    if (e.grad_ready && e.back) e.back();
  }
}

template <class T>
bool Tape<T>::has_grad(Var v) const {
  check(v);
  return entries_[v.id].grad_ready;
}

template <class T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  check(v);
  if (!entries_[v.id].grad_ready)
    throw ConfigError("gradient not available; call backward first");
  return entries_[v.id].grad;
}

template <class T>
std::vector<typename Tape<T>::ParamGrad> Tape<T>::param_grads() const {
  std::vector<ParamGrad> out;
  for (const Entry& e : entries_) {
    if (!e.param_name.empty())
      out.push_back({e.param_name, e.grad_ready ? &e.grad : nullptr});
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace hanerf
