// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace crwkv {
namespace {

// ---------------------------------------------------------------------------
// Recording helper: resolves the active tape once and only if some input is
// actually tracked on it.
// ---------------------------------------------------------------------------
struct Rec {
  Tape* tape = nullptr;
  Rec(std::initializer_list<const Tensor*> inputs) {
    Tape* t = Tape::active();
    if (!t || !t->recording()) return;
    for (const Tensor* in : inputs) {
      if (in && in->defined() && t->id_of(*in) >= 0) {
        tape = t;
        return;
      }
    }
  }
  bool on() const { return tape != nullptr; }
  int32_t id(const Tensor& t) const { return tape->id_of(t); }
  int32_t out(Tensor& o) const { return tape->register_value(o); }
  void node(std::function<void(Tape&)> fn) const {
    tape->push_node(std::move(fn));
  }
};

void check_same_dtype(const Tensor& a, const Tensor& b, const char* who) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(who) + ": dtype mismatch (" +
                     dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()) +
                     ")");
}

// ---------------------------------------------------------------------------
// Trailing-dimension broadcast plan.
// ---------------------------------------------------------------------------
struct BPlan {
  Shape out;
  std::vector<int64_t> sa, sb;  // per-out-dim element strides (0 = broadcast)
};

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 0);
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

BPlan make_plan(const Shape& a, const Shape& b) {
  BPlan pl;
  pl.out = broadcast_shape(a, b);
  size_t nr = pl.out.size();
  pl.sa.assign(nr, 0);
  pl.sb.assign(nr, 0);
  auto stra = row_major_strides(a);
  auto strb = row_major_strides(b);
  for (size_t i = 0; i < nr; ++i) {
    size_t oi = nr - 1 - i;
    if (i < a.size()) {
      size_t ai = a.size() - 1 - i;
      pl.sa[oi] = (a[ai] == 1 && pl.out[oi] != 1) ? 0 : stra[ai];
    }
    if (i < b.size()) {
      size_t bi = b.size() - 1 - i;
      pl.sb[oi] = (b[bi] == 1 && pl.out[oi] != 1) ? 0 : strb[bi];
    }
  }
  return pl;
}

template <typename T, class F>
void apply_bcast(const T* pa, const T* pb, T* po, const BPlan& pl, F f) {
  int nr = int(pl.out.size());
  int64_t total = shape_numel(pl.out);
  if (total == 0) return;
  if (nr == 0) {
    po[0] = f(pa[0], pb[0]);
    return;
  }
  int64_t inner = pl.out[size_t(nr - 1)];
  int64_t ia = pl.sa[size_t(nr - 1)], ib = pl.sb[size_t(nr - 1)];
  int64_t outer = total / std::max<int64_t>(inner, 1);
  if (inner == 0) return;
  std::vector<int64_t> idx(size_t(std::max(nr - 1, 0)), 0);
  int64_t offa = 0, offb = 0;
  for (int64_t o = 0;;) {
    const T* ra = pa + offa;
    const T* rb = pb + offb;
    if (ia == 1 && ib == 1) {
      for (int64_t j = 0; j < inner; ++j) po[j] = f(ra[j], rb[j]);
    } else {
      for (int64_t j = 0; j < inner; ++j) po[j] = f(ra[j * ia], rb[j * ib]);
    }
    po += inner;
    if (++o >= outer) break;
    for (int d = nr - 2; d >= 0; --d) {
      idx[size_t(d)]++;
      offa += pl.sa[size_t(d)];
      offb += pl.sb[size_t(d)];
      if (idx[size_t(d)] < pl.out[size_t(d)]) break;
      offa -= pl.sa[size_t(d)] * pl.out[size_t(d)];
      offb -= pl.sb[size_t(d)] * pl.out[size_t(d)];
      idx[size_t(d)] = 0;
    }
  }
}

template <class F>
Tensor binary_forward(const Tensor& a, const Tensor& b, const char* who, F f) {
  if (!a.defined() || !b.defined())
    throw ShapeError(std::string(who) + ": undefined operand");
  check_same_dtype(a, b, who);
  BPlan pl = make_plan(a.shape(), b.shape());
  Tensor out = Tensor::zeros(pl.out, a.dtype());
  if (a.dtype() == Dtype::F32)
    apply_bcast<float>(a.data<float>().data(), b.data<float>().data(),
                       out.mutable_data<float>().data(), pl, f);
  else
    apply_bcast<double>(a.data<double>().data(), b.data<double>().data(),
                        out.mutable_data<double>().data(), pl, f);
  opcount::add(uint64_t(out.numel()));
  return out;
}

template <class F>
Tensor unary_forward(const Tensor& x, const char* who, F f) {
  if (!x.defined()) throw ShapeError(std::string(who) + ": undefined operand");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  int64_t n = x.numel();
  if (x.dtype() == Dtype::F32) {
    const float* px = x.data<float>().data();
    float* po = out.mutable_data<float>().data();
    for (int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
  } else {
    const double* px = x.data<double>().data();
    double* po = out.mutable_data<double>().data();
    for (int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
  }
  opcount::add(uint64_t(n));
  return out;
}

// ---------------------------------------------------------------------------
// Raw matmul kernels (ikj order, contiguous inner loops).
// ---------------------------------------------------------------------------
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  std::fill(c, c + m * n, T(0));
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] = a[m,n] * b^T  with b:[k,n]
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = 0;
      for (int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] = acc;
    }
  }
}

// c[k,n] = a^T * b  with a:[m,k], b:[m,n]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  std::fill(c, c + k * n, T(0));
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor matmul_nt_raw(const Tensor& a, const Tensor& bt) {
  int64_t m = a.dim(0), n = a.dim(1), k = bt.dim(0);
  Tensor out = Tensor::zeros({m, k}, a.dtype());
  if (a.dtype() == Dtype::F32)
    mm_nt(a.data<float>().data(), bt.data<float>().data(),
          out.mutable_data<float>().data(), m, n, k);
  else
    mm_nt(a.data<double>().data(), bt.data<double>().data(),
          out.mutable_data<double>().data(), m, n, k);
  opcount::add(uint64_t(2 * m * n * k));
  return out;
}

Tensor matmul_tn_raw(const Tensor& at, const Tensor& b) {
  int64_t m = at.dim(0), k = at.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({k, n}, b.dtype());
  if (b.dtype() == Dtype::F32)
    mm_tn(at.data<float>().data(), b.data<float>().data(),
          out.mutable_data<float>().data(), m, k, n);
  else
    mm_tn(at.data<double>().data(), b.data<double>().data(),
          out.mutable_data<double>().data(), m, k, n);
  opcount::add(uint64_t(2 * m * k * n));
  return out;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t nr = std::max(a.size(), b.size());
  Shape out(nr, 1);
  for (size_t i = 0; i < nr; ++i) {
    int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    out[nr - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor sum_to(const Tensor& g, const Shape& target) {
  if (same_shape(g.shape(), target)) return g;
  size_t nr = g.shape().size();
  // right-align target against g, sum every axis that was broadcast
  std::vector<int> axes;
  for (size_t i = 0; i < nr; ++i) {
    size_t gi = nr - 1 - i;
    int64_t td = i < target.size() ? target[target.size() - 1 - i] : 1;
    if (g.shape()[gi] != td) axes.push_back(int(gi));
  }
  Tensor r = axes.empty() ? g : reduce_sum(g, axes, /*keepdims=*/true);
  return reshape(r, target);
}

// ---------------------------------------------------------------------------
// Elementwise binaries.
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = binary_forward(a, b, "add", [](auto x, auto y) { return x + y; });
  Rec rec{&a, &b};
  if (rec.on()) {
    int32_t aid = rec.id(a), bid = rec.id(b);
    Shape as = a.shape(), bs = b.shape();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      if (aid >= 0) t.accumulate(aid, sum_to(*g, as));
      if (bid >= 0) t.accumulate(bid, sum_to(*g, bs));
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = binary_forward(a, b, "sub", [](auto x, auto y) { return x - y; });
  Rec rec{&a, &b};
  if (rec.on()) {
    int32_t aid = rec.id(a), bid = rec.id(b);
    Shape as = a.shape(), bs = b.shape();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      if (aid >= 0) t.accumulate(aid, sum_to(*g, as));
      if (bid >= 0) t.accumulate(bid, sum_to(neg(*g), bs));
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = binary_forward(a, b, "mul", [](auto x, auto y) { return x * y; });
  Rec rec{&a, &b};
  if (rec.on()) {
    int32_t aid = rec.id(a), bid = rec.id(b);
    Tensor ac = a, bc = b;
    Shape as = a.shape(), bs = b.shape();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      if (aid >= 0) t.accumulate(aid, sum_to(mul(*g, bc), as));
      if (bid >= 0) t.accumulate(bid, sum_to(mul(*g, ac), bs));
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = binary_forward(a, b, "div", [](auto x, auto y) { return x / y; });
  Rec rec{&a, &b};
  if (rec.on()) {
    int32_t aid = rec.id(a), bid = rec.id(b);
    Tensor bc = b, oc = out;
    Shape as = a.shape(), bs = b.shape();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      if (aid >= 0) t.accumulate(aid, sum_to(div(*g, bc), as));
      if (bid >= 0)
        t.accumulate(bid, sum_to(neg(div(mul(*g, oc), bc)), bs));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise unaries.
// ---------------------------------------------------------------------------
Tensor exp(const Tensor& x) {
  Tensor out = unary_forward(x, "exp", [](auto v) { return std::exp(v); });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Tensor oc = out;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) t.accumulate(xid, mul(*g, oc));
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = unary_forward(x, "log", [](auto v) { return std::log(v); });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Tensor xc = x;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) t.accumulate(xid, div(*g, xc));
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = unary_forward(x, "sigmoid", [](auto v) {
    using T = decltype(v);
    if (v >= T(0)) {
      T e = std::exp(-v);
      return T(1) / (T(1) + e);
    }
    T e = std::exp(v);
    return e / (T(1) + e);
  });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Tensor oc = out;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) {
        Tensor one = Tensor::scalar(1.0, oc.dtype());
        t.accumulate(xid, mul(*g, mul(oc, sub(one, oc))));
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = unary_forward(x, "relu", [](auto v) {
    using T = decltype(v);
    return v > T(0) ? v : T(0);
  });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Tensor xc = x;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) {
        Tensor mask = unary_forward(xc, "relu_mask", [](auto v) {
          using T = decltype(v);
          return v > T(0) ? T(1) : T(0);
        });
        t.accumulate(xid, mul(*g, mask));
      }
    });
  }
  return out;
}

Tensor square(const Tensor& x) {
  Tensor out = unary_forward(x, "square", [](auto v) { return v * v; });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Tensor xc = x;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid))
        t.accumulate(xid, mul(*g, mul_scalar(xc, 2.0)));
    });
  }
  return out;
}

Tensor sqrt(const Tensor& x) {
  Tensor out = unary_forward(x, "sqrt", [](auto v) { return std::sqrt(v); });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Tensor oc = out;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid))
        t.accumulate(xid, div(mul_scalar(*g, 0.5), oc));
    });
  }
  return out;
}

Tensor neg(const Tensor& x) {
  Tensor out = unary_forward(x, "neg", [](auto v) { return -v; });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) t.accumulate(xid, neg(*g));
    });
  }
  return out;
}

Tensor max_with_const(const Tensor& x, double c) {
  Tensor out = unary_forward(x, "max_with_const", [c](auto v) {
    using T = decltype(v);
    return v > T(c) ? v : T(c);
  });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Tensor xc = x;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) {
        Tensor mask = unary_forward(xc, "mwc_mask", [c](auto v) {
          using T = decltype(v);
          return v > T(c) ? T(1) : T(0);
        });
        t.accumulate(xid, mul(*g, mask));
      }
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ShapeError("clamp: lo > hi");
  Tensor out = unary_forward(x, "clamp", [lo, hi](auto v) {
    using T = decltype(v);
    return v < T(lo) ? T(lo) : (v > T(hi) ? T(hi) : v);
  });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Tensor xc = x;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) {
        Tensor mask = unary_forward(xc, "clamp_mask", [lo, hi](auto v) {
          using T = decltype(v);
          return (v > T(lo) && v < T(hi)) ? T(1) : T(0);
        });
        t.accumulate(xid, mul(*g, mask));
      }
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, double c) {
  Tensor out = unary_forward(x, "add_scalar", [c](auto v) {
    using T = decltype(v);
    return v + T(c);
  });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) t.accumulate(xid, *g);
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& x, double c) {
  Tensor out = unary_forward(x, "mul_scalar", [c](auto v) {
    using T = decltype(v);
    return v * T(c);
  });
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) t.accumulate(xid, mul_scalar(*g, c));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------
namespace {

std::vector<int> normalize_axes(int ndim, std::vector<int> axes) {
  if (axes.empty()) {
    axes.resize(size_t(ndim));
    for (int i = 0; i < ndim; ++i) axes[size_t(i)] = i;
    return axes;
  }
  std::sort(axes.begin(), axes.end());
  for (size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] < 0 || axes[i] >= ndim)
      throw ShapeError("reduce: invalid axis " + std::to_string(axes[i]));
    if (i > 0 && axes[i] == axes[i - 1])
      throw ShapeError("reduce: duplicate axis");
  }
  return axes;
}

Shape keep_shape_of(const Shape& s, const std::vector<int>& axes) {
  Shape k = s;
  for (int a : axes) k[size_t(a)] = 1;
  return k;
}

Shape drop_shape_of(const Shape& s, const std::vector<int>& axes) {
  Shape r;
  size_t ai = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (ai < axes.size() && int(i) == axes[ai]) {
      ++ai;
      continue;
    }
    r.push_back(s[i]);
  }
  return r;  // may be rank-0
}

// Walks x in flat order keeping an output offset in the keep-shape layout.
template <typename T, class F>
void reduce_walk(const Tensor& x, const std::vector<int>& axes, T* out, F f) {
  const Shape& xs = x.shape();
  int nr = x.ndim();
  auto xst = row_major_strides(xs);
  Shape ks = keep_shape_of(xs, axes);
  auto kst = row_major_strides(ks);
  std::vector<bool> reduced(size_t(nr), false);
  for (int a : axes) reduced[size_t(a)] = true;
  std::vector<int64_t> ost(size_t(nr), 0);
  for (int i = 0; i < nr; ++i) ost[size_t(i)] = reduced[size_t(i)] ? 0 : kst[size_t(i)];

  const T* px = x.data<T>().data();
  int64_t n = x.numel();
  if (n == 0) return;
  if (nr == 0) {
    f(out[0], px[0], 0);
    return;
  }
  std::vector<int64_t> idx(size_t(nr), 0);
  int64_t ooff = 0;
  for (int64_t i = 0;;) {
    f(out[ooff], px[i], i);
    if (++i >= n) break;
    for (int d = nr - 1; d >= 0; --d) {
      idx[size_t(d)]++;
      ooff += ost[size_t(d)];
      if (idx[size_t(d)] < xs[size_t(d)]) break;
      ooff -= ost[size_t(d)] * xs[size_t(d)];
      idx[size_t(d)] = 0;
    }
  }
}

}  // namespace

Tensor reduce_sum(const Tensor& x, std::vector<int> axes, bool keepdims) {
  auto ax = normalize_axes(x.ndim(), std::move(axes));
  Shape ks = keep_shape_of(x.shape(), ax);
  Shape os = keepdims ? ks : drop_shape_of(x.shape(), ax);
  Tensor out = Tensor::zeros(ks, x.dtype());
  if (x.dtype() == Dtype::F32) {
    float* po = out.mutable_data<float>().data();
    reduce_walk<float>(x, ax, po,
                       [](float& o, float v, int64_t) { o += v; });
  } else {
    double* po = out.mutable_data<double>().data();
    reduce_walk<double>(x, ax, po,
                        [](double& o, double v, int64_t) { o += v; });
  }
  opcount::add(uint64_t(x.numel()));
  out = out.view(os);

  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Shape xs = x.shape();
    Dtype dt = x.dtype();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) {
        // expand back: reshape to keep-shape then broadcast-add onto zeros
        Tensor gk = g->view(ks);
        t.accumulate(xid, add(Tensor::zeros(xs, dt), gk));
      }
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& x, std::vector<int> axes, bool keepdims) {
  auto ax = normalize_axes(x.ndim(), axes);
  int64_t m = 1;
  for (int a : ax) m *= x.shape()[size_t(a)];
  if (m == 0) throw ShapeError("reduce_mean: empty reduction");
  Tensor s = reduce_sum(x, std::move(axes), keepdims);
  return mul_scalar(s, 1.0 / double(m));
}

Tensor reduce_max(const Tensor& x, std::vector<int> axes, bool keepdims) {
  if (x.numel() == 0) throw ShapeError("reduce_max: empty tensor");
  auto ax = normalize_axes(x.ndim(), std::move(axes));
  Shape ks = keep_shape_of(x.shape(), ax);
  Shape os = keepdims ? ks : drop_shape_of(x.shape(), ax);
  Tensor out = Tensor::full(ks, -std::numeric_limits<double>::infinity(),
                            x.dtype());
  std::vector<int64_t> argmax(size_t(shape_numel(ks)), -1);
  // out offsets mirror the walk in reduce_walk, so track them via a second
  // pass-through lambda that also records the winning flat index.
  if (x.dtype() == Dtype::F32) {
    float* po = out.mutable_data<float>().data();
    int64_t* parg = argmax.data();
    reduce_walk<float>(x, ax, po, [po, parg](float& o, float v, int64_t i) {
      if (v > o) {
        o = v;
        parg[&o - po] = i;
      }
    });
  } else {
    double* po = out.mutable_data<double>().data();
    int64_t* parg = argmax.data();
    reduce_walk<double>(x, ax, po, [po, parg](double& o, double v, int64_t i) {
      if (v > o) {
        o = v;
        parg[&o - po] = i;
      }
    });
  }
  opcount::add(uint64_t(x.numel()));
  out = out.view(os);

  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Shape xs = x.shape();
    Dtype dt = x.dtype();
    auto arg = std::make_shared<std::vector<int64_t>>(std::move(argmax));
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) {
        Tensor gx = Tensor::zeros(xs, dt);
        for (size_t j = 0; j < arg->size(); ++j) {
          int64_t src = (*arg)[j];
          if (src >= 0) gx.set(src, gx.at(src) + g->at(int64_t(j)));
        }
        t.accumulate(xid, std::move(gx));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra.
// ---------------------------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul: expects rank-2 operands, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ: " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  check_same_dtype(a, b, "matmul");
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n}, a.dtype());
  if (a.dtype() == Dtype::F32)
    mm_nn(a.data<float>().data(), b.data<float>().data(),
          out.mutable_data<float>().data(), m, k, n);
  else
    mm_nn(a.data<double>().data(), b.data<double>().data(),
          out.mutable_data<double>().data(), m, k, n);
  opcount::add(uint64_t(2 * m * k * n));

  Rec rec{&a, &b};
  if (rec.on()) {
    int32_t aid = rec.id(a), bid = rec.id(b);
    Tensor ac = a, bc = b;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      if (aid >= 0) t.accumulate(aid, matmul_nt_raw(*g, bc));
      if (bid >= 0) t.accumulate(bid, matmul_tn_raw(ac, *g));
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("transpose2d: expects rank-2");
  int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m}, x.dtype());
  auto run = [&](auto* po, const auto* px) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
  };
  if (x.dtype() == Dtype::F32)
    run(out.mutable_data<float>().data(), x.data<float>().data());
  else
    run(out.mutable_data<double>().data(), x.data<double>().data());

  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) t.accumulate(xid, transpose2d(*g));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops.
// ---------------------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.view(std::move(shape));
  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Shape xs = x.shape();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      if (const Tensor* g = t.grad_ptr(oid)) t.accumulate(xid, g->view(xs));
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int nr = parts[0].ndim();
  if (axis < 0 || axis >= nr) throw ShapeError("concat: invalid axis");
  Shape os = parts[0].shape();
  int64_t total_axis = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != nr) throw ShapeError("concat: rank mismatch");
    check_same_dtype(parts[0], p, "concat");
    for (int d = 0; d < nr; ++d) {
      if (d != axis && p.dim(d) != os[size_t(d)])
        throw ShapeError("concat: shape mismatch at axis " + std::to_string(d));
    }
    total_axis += p.dim(axis);
  }
  os[size_t(axis)] = total_axis;
  Tensor out = Tensor::zeros(os, parts[0].dtype());

  // outer = dims before axis; inner = dims after axis (elements)
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= os[size_t(d)];
  for (int d = axis + 1; d < nr; ++d) inner *= os[size_t(d)];

  auto copy_part = [&](const Tensor& p, int64_t axis_off) {
    int64_t pa = p.dim(axis);
    auto run = [&](auto* po, const auto* pp) {
      for (int64_t o = 0; o < outer; ++o) {
        auto* dst = po + (o * total_axis + axis_off) * inner;
        const auto* src = pp + o * pa * inner;
        std::copy(src, src + pa * inner, dst);
      }
    };
    if (out.dtype() == Dtype::F32)
      run(out.mutable_data<float>().data(), p.data<float>().data());
    else
      run(out.mutable_data<double>().data(), p.data<double>().data());
  };

  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    copy_part(p, off);
    off += p.dim(axis);
  }

  Tape* tape = Tape::active();
  bool track = false;
  if (tape && tape->recording()) {
    for (const Tensor& p : parts)
      if (tape->id_of(p) >= 0) track = true;
  }
  if (track) {
    std::vector<int32_t> ids;
    std::vector<int64_t> lens;
    for (const Tensor& p : parts) {
      ids.push_back(tape->id_of(p));
      lens.push_back(p.dim(axis));
    }
    int32_t oid = tape->register_value(out);
    tape->push_node([oid, ids, lens, offsets, axis](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= 0)
          t.accumulate(ids[i], slice(*g, axis, offsets[i], lens[i]));
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  int nr = x.ndim();
  if (axis < 0 || axis >= nr) throw ShapeError("slice: invalid axis");
  if (start < 0 || len < 0 || start + len > x.dim(axis))
    throw ShapeError("slice: out of range");
  Shape os = x.shape();
  os[size_t(axis)] = len;
  Tensor out = Tensor::zeros(os, x.dtype());

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < nr; ++d) inner *= x.dim(d);
  int64_t xa = x.dim(axis);
  auto run = [&](auto* po, const auto* px) {
    for (int64_t o = 0; o < outer; ++o) {
      const auto* src = px + (o * xa + start) * inner;
      std::copy(src, src + len * inner, po + o * len * inner);
    }
  };
  if (x.dtype() == Dtype::F32)
    run(out.mutable_data<float>().data(), x.data<float>().data());
  else
    run(out.mutable_data<double>().data(), x.data<double>().data());

  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Shape xs = x.shape();
    Dtype dt = x.dtype();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      Tensor gx = Tensor::zeros(xs, dt);
      int64_t outer2 = 1, inner2 = 1;
      int nr2 = int(xs.size());
      for (int d = 0; d < axis; ++d) outer2 *= xs[size_t(d)];
      for (int d = axis + 1; d < nr2; ++d) inner2 *= xs[size_t(d)];
      int64_t xa2 = xs[size_t(axis)];
      auto scat = [&](auto* pgx, const auto* pg) {
        for (int64_t o = 0; o < outer2; ++o) {
          auto* dst = pgx + (o * xa2 + start) * inner2;
          const auto* src = pg + o * len * inner2;
          std::copy(src, src + len * inner2, dst);
        }
      };
      if (dt == Dtype::F32)
        scat(gx.mutable_data<float>().data(), g->data<float>().data());
      else
        scat(gx.mutable_data<double>().data(), g->data<double>().data());
      t.accumulate(xid, std::move(gx));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d, direct form.
// ---------------------------------------------------------------------------
namespace {

struct ConvDims {
  int64_t ci, h, w, co, kh, kw, oh, ow;
  int stride, pad;
};

ConvDims conv_check(const Tensor& x, const Tensor& w, const Tensor& bias,
                    int stride, int pad) {
  if (x.ndim() != 3) throw ShapeError("conv2d: input must be [C,H,W]");
  if (w.ndim() != 4) throw ShapeError("conv2d: weight must be [Co,Ci,kh,kw]");
  ConvDims d;
  d.ci = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.co = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (w.dim(1) != d.ci)
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                     " input channels, image has " + std::to_string(d.ci));
  if (d.kh % 2 == 0 || d.kw % 2 == 0 || d.kh != d.kw)
    throw ShapeError("conv2d: kernels must be odd and square");
  if (pad != 0 && pad != int((d.kh - 1) / 2))
    throw ShapeError("conv2d: pad must be 0 or (k-1)/2");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.co))
    throw ShapeError("conv2d: bias must be [Co]");
  int64_t ph = d.h + 2 * pad, pw = d.w + 2 * pad;
  if (d.kh > ph || d.kw > pw)
    throw ShapeError("conv2d: kernel larger than padded input");
  d.oh = (ph - d.kh) / stride + 1;
  d.ow = (pw - d.kw) / stride + 1;
  return d;
}

template <typename T>
void conv_fwd(const ConvDims& d, const T* x, const T* w, const T* b, T* y) {
  for (int64_t co = 0; co < d.co; ++co) {
    T bv = b ? b[co] : T(0);
    T* ych = y + co * d.oh * d.ow;
    std::fill(ych, ych + d.oh * d.ow, bv);
    for (int64_t ci = 0; ci < d.ci; ++ci) {
      const T* xch = x + ci * d.h * d.w;
      const T* wch = w + (co * d.ci + ci) * d.kh * d.kw;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          T wv = wch[ky * d.kw + kx];
          if (wv == T(0)) continue;
          for (int64_t oy = 0; oy < d.oh; ++oy) {
            int64_t iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            // valid ox range: 0 <= ox*stride + kx - pad < w
            int64_t lo = kx - d.pad < 0
                             ? (d.pad - kx + d.stride - 1) / d.stride
                             : 0;
            int64_t hi = (d.w - 1 - kx + d.pad) / d.stride;
            if (hi >= d.ow) hi = d.ow - 1;
            const T* xrow = xch + iy * d.w + kx - d.pad;
            T* yrow = ych + oy * d.ow;
            for (int64_t ox = lo; ox <= hi; ++ox)
              yrow[ox] += wv * xrow[ox * d.stride];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_bwd_x(const ConvDims& d, const T* w, const T* g, T* gx) {
  std::fill(gx, gx + d.ci * d.h * d.w, T(0));
  for (int64_t co = 0; co < d.co; ++co) {
    const T* gch = g + co * d.oh * d.ow;
    for (int64_t ci = 0; ci < d.ci; ++ci) {
      T* xch = gx + ci * d.h * d.w;
      const T* wch = w + (co * d.ci + ci) * d.kh * d.kw;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          T wv = wch[ky * d.kw + kx];
          if (wv == T(0)) continue;
          for (int64_t oy = 0; oy < d.oh; ++oy) {
            int64_t iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            int64_t lo = kx - d.pad < 0
                             ? (d.pad - kx + d.stride - 1) / d.stride
                             : 0;
            int64_t hi = (d.w - 1 - kx + d.pad) / d.stride;
            if (hi >= d.ow) hi = d.ow - 1;
            T* xrow = xch + iy * d.w + kx - d.pad;
            const T* grow = gch + oy * d.ow;
            for (int64_t ox = lo; ox <= hi; ++ox)
              xrow[ox * d.stride] += wv * grow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_bwd_w(const ConvDims& d, const T* x, const T* g, T* gw) {
  std::fill(gw, gw + d.co * d.ci * d.kh * d.kw, T(0));
  for (int64_t co = 0; co < d.co; ++co) {
    const T* gch = g + co * d.oh * d.ow;
    for (int64_t ci = 0; ci < d.ci; ++ci) {
      const T* xch = x + ci * d.h * d.w;
      T* wch = gw + (co * d.ci + ci) * d.kh * d.kw;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          T acc = 0;
          for (int64_t oy = 0; oy < d.oh; ++oy) {
            int64_t iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            int64_t lo = kx - d.pad < 0
                             ? (d.pad - kx + d.stride - 1) / d.stride
                             : 0;
            int64_t hi = (d.w - 1 - kx + d.pad) / d.stride;
            if (hi >= d.ow) hi = d.ow - 1;
            const T* xrow = xch + iy * d.w + kx - d.pad;
            const T* grow = gch + oy * d.ow;
            for (int64_t ox = lo; ox <= hi; ++ox)
              acc += grow[ox] * xrow[ox * d.stride];
          }
          wch[ky * d.kw + kx] += acc;
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad) {
  check_same_dtype(x, w, "conv2d");
  ConvDims d = conv_check(x, w, bias, stride, pad);
  Tensor out = Tensor::zeros({d.co, d.oh, d.ow}, x.dtype());
  if (x.dtype() == Dtype::F32)
    conv_fwd<float>(d, x.data<float>().data(), w.data<float>().data(),
                    bias.defined() ? bias.data<float>().data() : nullptr,
                    out.mutable_data<float>().data());
  else
    conv_fwd<double>(d, x.data<double>().data(), w.data<double>().data(),
                     bias.defined() ? bias.data<double>().data() : nullptr,
                     out.mutable_data<double>().data());
  opcount::add(uint64_t(2 * d.co * d.oh * d.ow * d.ci * d.kh * d.kw));

  Rec rec{&x, &w, &bias};
  if (rec.on()) {
    int32_t xid = rec.id(x), wid = rec.id(w);
    int32_t bid = bias.defined() ? rec.id(bias) : -1;
    Tensor xc = x, wc = w;
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      Dtype dt = xc.dtype();
      if (xid >= 0) {
        Tensor gx = Tensor::zeros(xc.shape(), dt);
        if (dt == Dtype::F32)
          conv_bwd_x<float>(d, wc.data<float>().data(), g->data<float>().data(),
                            gx.mutable_data<float>().data());
        else
          conv_bwd_x<double>(d, wc.data<double>().data(),
                             g->data<double>().data(),
                             gx.mutable_data<double>().data());
        opcount::add(uint64_t(2 * d.co * d.oh * d.ow * d.ci * d.kh * d.kw));
        t.accumulate(xid, std::move(gx));
      }
      if (wid >= 0) {
        Tensor gw = Tensor::zeros(wc.shape(), dt);
        if (dt == Dtype::F32)
          conv_bwd_w<float>(d, xc.data<float>().data(), g->data<float>().data(),
                            gw.mutable_data<float>().data());
        else
          conv_bwd_w<double>(d, xc.data<double>().data(),
                             g->data<double>().data(),
                             gw.mutable_data<double>().data());
        opcount::add(uint64_t(2 * d.co * d.oh * d.ow * d.ci * d.kh * d.kw));
        t.accumulate(wid, std::move(gw));
      }
      if (bid >= 0) {
        t.accumulate(bid, reduce_sum(*g, {1, 2}, false));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// resample2d.
// ---------------------------------------------------------------------------
namespace {

struct LerpTap {
  int64_t i0, i1;
  double w0, w1;
};

// half-pixel centers, edges clamped
std::vector<LerpTap> bilinear_taps(int64_t out_n, int64_t in_n) {
  std::vector<LerpTap> taps(static_cast<size_t>(out_n));
  double scale = double(in_n) / double(out_n);
  for (int64_t o = 0; o < out_n; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    double fl = std::floor(src);
    int64_t i0 = int64_t(fl);
    double frac = src - fl;
    int64_t i1 = i0 + 1;
    if (i0 < 0) i0 = 0;
    if (i1 < 0) i1 = 0;
    if (i0 > in_n - 1) i0 = in_n - 1;
    if (i1 > in_n - 1) i1 = in_n - 1;
    taps[size_t(o)] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

Tensor resample2d(const Tensor& x, int64_t out_h, int64_t out_w,
                  Resample mode) {
  if (x.ndim() != 3) throw ShapeError("resample2d: input must be [C,H,W]");
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resample2d: empty output");
  bool up = mode != Resample::kAvgPoolDown;
  if (up) {
    if (out_h % h != 0 || out_w % w != 0)
      throw ShapeError("resample2d: non-integer upscale factor");
  } else {
    if (h % out_h != 0 || w % out_w != 0)
      throw ShapeError("resample2d: non-integer downscale factor");
  }
  Tensor out = Tensor::zeros({c, out_h, out_w}, x.dtype());

  auto run = [&](auto* po, const auto* px) {
    using T = std::remove_reference_t<decltype(po[0])>;
    if (mode == Resample::kBilinearUp) {
      auto ty = bilinear_taps(out_h, h);
      auto tx = bilinear_taps(out_w, w);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* src = px + ch * h * w;
        T* dst = po + ch * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
          const LerpTap& y = ty[size_t(oy)];
          const T* r0 = src + y.i0 * w;
          const T* r1 = src + y.i1 * w;
          for (int64_t ox = 0; ox < out_w; ++ox) {
            const LerpTap& xx = tx[size_t(ox)];
            double v = y.w0 * (xx.w0 * double(r0[xx.i0]) +
                               xx.w1 * double(r0[xx.i1])) +
                       y.w1 * (xx.w0 * double(r1[xx.i0]) +
                               xx.w1 * double(r1[xx.i1]));
            dst[oy * out_w + ox] = T(v);
          }
        }
      }
    } else if (mode == Resample::kAvgPoolDown) {
      int64_t fy = h / out_h, fx = w / out_w;
      double inv = 1.0 / double(fy * fx);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* src = px + ch * h * w;
        T* dst = po + ch * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
          for (int64_t ox = 0; ox < out_w; ++ox) {
            double acc = 0;
            for (int64_t dy = 0; dy < fy; ++dy) {
              const T* row = src + (oy * fy + dy) * w + ox * fx;
              for (int64_t dx = 0; dx < fx; ++dx) acc += double(row[dx]);
            }
            dst[oy * out_w + ox] = T(acc * inv);
          }
        }
      }
    } else {  // kNearestUp
      int64_t fy = out_h / h, fx = out_w / w;
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* src = px + ch * h * w;
        T* dst = po + ch * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
          const T* row = src + (oy / fy) * w;
          for (int64_t ox = 0; ox < out_w; ++ox)
            dst[oy * out_w + ox] = row[ox / fx];
        }
      }
    }
  };
  if (x.dtype() == Dtype::F32)
    run(out.mutable_data<float>().data(), x.data<float>().data());
  else
    run(out.mutable_data<double>().data(), x.data<double>().data());
  opcount::add(uint64_t(out.numel()) *
               (mode == Resample::kBilinearUp
                    ? 8
                    : (mode == Resample::kAvgPoolDown
                           ? uint64_t((h / out_h) * (w / out_w))
                           : 1)));

  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Shape xs = x.shape();
    Dtype dt = x.dtype();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      Tensor gx = Tensor::zeros(xs, dt);
      auto scat = [&](auto* pgx, const auto* pg) {
        using T = std::remove_reference_t<decltype(pgx[0])>;
        if (mode == Resample::kBilinearUp) {
          auto ty = bilinear_taps(out_h, h);
          auto tx = bilinear_taps(out_w, w);
          for (int64_t ch = 0; ch < c; ++ch) {
            T* dst = pgx + ch * h * w;
            const T* src = pg + ch * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
              const LerpTap& y = ty[size_t(oy)];
              for (int64_t ox = 0; ox < out_w; ++ox) {
                const LerpTap& xx = tx[size_t(ox)];
                double gv = double(src[oy * out_w + ox]);
                dst[y.i0 * w + xx.i0] += T(y.w0 * xx.w0 * gv);
                dst[y.i0 * w + xx.i1] += T(y.w0 * xx.w1 * gv);
                dst[y.i1 * w + xx.i0] += T(y.w1 * xx.w0 * gv);
                dst[y.i1 * w + xx.i1] += T(y.w1 * xx.w1 * gv);
              }
            }
          }
        } else if (mode == Resample::kAvgPoolDown) {
          int64_t fy = h / out_h, fx = w / out_w;
          double inv = 1.0 / double(fy * fx);
          for (int64_t ch = 0; ch < c; ++ch) {
            T* dst = pgx + ch * h * w;
            const T* src = pg + ch * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
              for (int64_t ox = 0; ox < out_w; ++ox) {
                T gv = T(double(src[oy * out_w + ox]) * inv);
                for (int64_t dy = 0; dy < fy; ++dy) {
                  T* row = dst + (oy * fy + dy) * w + ox * fx;
                  for (int64_t dx = 0; dx < fx; ++dx) row[dx] += gv;
                }
              }
            }
          }
        } else {
          int64_t fy = out_h / h, fx = out_w / w;
          for (int64_t ch = 0; ch < c; ++ch) {
            T* dst = pgx + ch * h * w;
            const T* src = pg + ch * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy)
              for (int64_t ox = 0; ox < out_w; ++ox)
                dst[(oy / fy) * w + ox / fx] += src[oy * out_w + ox];
          }
        }
      };
      if (dt == Dtype::F32)
        scat(gx.mutable_data<float>().data(), g->data<float>().data());
      else
        scat(gx.mutable_data<double>().data(), g->data<double>().data());
      t.accumulate(xid, std::move(gx));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// qshift.
// ---------------------------------------------------------------------------
namespace {

// out[c,y,x] = in[c, y+dy, x+dx], zero where the source falls outside
template <typename T>
void shift_range(const T* in, T* out, int64_t c0, int64_t c1, int64_t h,
                 int64_t w, int64_t dy, int64_t dx) {
  for (int64_t ch = c0; ch < c1; ++ch) {
    const T* src = in + ch * h * w;
    T* dst = out + ch * h * w;
    for (int64_t y = 0; y < h; ++y) {
      int64_t sy = y + dy;
      if (sy < 0 || sy >= h) {
        std::fill(dst + y * w, dst + (y + 1) * w, T(0));
        continue;
      }
      const T* srow = src + sy * w;
      T* drow = dst + y * w;
      int64_t x0 = std::max<int64_t>(0, -dx);
      int64_t x1 = std::min<int64_t>(w, w - dx);
      if (x0 > 0) std::fill(drow, drow + x0, T(0));
      if (x1 < w) std::fill(drow + std::max<int64_t>(x1, 0), drow + w, T(0));
      for (int64_t x = x0; x < x1; ++x) drow[x] = srow[x + dx];
    }
  }
}

template <typename T>
void qshift_apply(const T* in, T* out, int64_t c, int64_t h, int64_t w,
                  bool inverse) {
  int64_t q = c / 4;
  // quarters: [0,q) left neighbor, [q,2q) right, [2q,3q) up, [3q,c) down
  struct Dir {
    int64_t dy, dx;
  };
  Dir dirs[4] = {{0, -1}, {0, +1}, {-1, 0}, {+1, 0}};
  int64_t bounds[5] = {0, q, 2 * q, 3 * q, c};
  for (int qi = 0; qi < 4; ++qi) {
    Dir d = dirs[qi];
    if (inverse) {
      d.dy = -d.dy;
      d.dx = -d.dx;
    }
    shift_range(in, out, bounds[qi], bounds[qi + 1], h, w, d.dy, d.dx);
  }
}

}  // namespace

Tensor qshift(const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("qshift: input must be [C,H,W]");
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0) throw ShapeError("qshift: empty spatial extent");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  if (x.dtype() == Dtype::F32)
    qshift_apply(x.data<float>().data(), out.mutable_data<float>().data(), c,
                 h, w, false);
  else
    qshift_apply(x.data<double>().data(), out.mutable_data<double>().data(), c,
                 h, w, false);

  Rec rec{&x};
  if (rec.on()) {
    int32_t xid = rec.id(x);
    Shape xs = x.shape();
    Dtype dt = x.dtype();
    int32_t oid = rec.out(out);
    rec.node([=](Tape& t) {
      const Tensor* g = t.grad_ptr(oid);
      if (!g) return;
      // adjoint of a shift is the opposite shift
      Tensor gx = Tensor::zeros(xs, dt);
      int64_t c2 = xs[0], h2 = xs[1], w2 = xs[2];
      if (dt == Dtype::F32)
        qshift_apply(g->data<float>().data(),
                     gx.mutable_data<float>().data(), c2, h2, w2, true);
      else
        qshift_apply(g->data<double>().data(),
                     gx.mutable_data<double>().data(), c2, h2, w2, true);
      t.accumulate(xid, std::move(gx));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization composites and layout helpers.
// ---------------------------------------------------------------------------
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.ndim() != 2) throw ShapeError("layer_norm: expects [N,d] tokens");
  Tensor mu = reduce_mean(x, {1}, true);
  Tensor xc = sub(x, mu);
  Tensor var = reduce_mean(square(xc), {1}, true);
  Tensor rstd = exp(mul_scalar(log(add_scalar(var, eps)), -0.5));
  Tensor xn = mul(xc, rstd);
  return add(mul(xn, gamma), beta);
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  if (x.ndim() != 3) throw ShapeError("group_norm: expects [C,H,W]");
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (groups < 1 || c % groups != 0)
    throw ShapeError("group_norm: channels not divisible by groups");
  Tensor xg = reshape(x, {int64_t(groups), (c / groups) * h * w});
  Tensor mu = reduce_mean(xg, {1}, true);
  Tensor xc = sub(xg, mu);
  Tensor var = reduce_mean(square(xc), {1}, true);
  Tensor rstd = exp(mul_scalar(log(add_scalar(var, eps)), -0.5));
  Tensor xn = reshape(mul(xc, rstd), {c, h, w});
  Tensor g3 = reshape(gamma, {c, 1, 1});
  Tensor b3 = reshape(beta, {c, 1, 1});
  return add(mul(xn, g3), b3);
}

Tensor chw_to_tokens(const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("chw_to_tokens: expects [C,H,W]");
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  return transpose2d(reshape(x, {c, h * w}));
}

Tensor tokens_to_chw(const Tensor& x, int64_t h, int64_t w) {
  if (x.ndim() != 2) throw ShapeError("tokens_to_chw: expects [N,d]");
  if (x.dim(0) != h * w)
    throw ShapeError("tokens_to_chw: token count != h*w");
  return reshape(transpose2d(x), {x.dim(1), h, w});
}

}  // namespace crwkv
