// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
//
// WKV attention kernels.
//
// Weight model, per channel: position t attends to position i with weight
//   e^{-(|t-i|-1)*w + k_i}   for i != t   (causal form: only i < t)
//   e^{u + k_t}              for i == t
// and the output is the weighted average of v.  All streaming forms keep
// running sums as (mantissa, exponent) pairs -- a, b at scale e^p -- and
// rebase exponents with max() before every exp(), so k magnitudes around
// +-80 stay finite in f32.
//
// The backward passes reuse two identities.  With D_t the denominator and
// G_t = g_t / D_t:
//   dL/dv_i = e^{k_i} * S_G(i) + e^{k_i+u} G_i
//   dL/dk_i = e^{k_i} * (v_i S_G(i) - S_H(i)) + e^{k_i+u} G_i (v_i - y_i)
// where S_G / S_H are decay-weighted sums of G_t and G_t y_t over the other
// positions -- computable by one sweep in each direction.  dL/dw needs the
// distance-weighted sums A^, B^; they obey the same decayed recurrence with
// an extra "+A" (no bonus term), so they ride along in the forward sweep.
// Everything is O(T*d).

#include "crwkv/wkv.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "crwkv/tape.hpp"

namespace crwkv::wkv {
namespace {

constexpr uint64_t kOpsPerCellRecurrent = 24;
constexpr uint64_t kOpsPerCellBidirectional = 42;
constexpr uint64_t kOpsPerPairNaive = 5;

struct Dims {
  int64_t t, d;
};

Dims validate(const Tensor& k, const Tensor& v, const WkvParams& p) {
  if (k.ndim() != 2 || v.ndim() != 2)
    throw ShapeError("wkv: k and v must be [T,d]");
  if (!same_shape(k.shape(), v.shape()))
    throw ShapeError("wkv: k/v shape mismatch");
  Dims dm{k.dim(0), k.dim(1)};
  if (dm.t == 0) throw ShapeError("wkv: empty sequence");
  auto param_ok = [&](const Tensor& x) {
    return x.defined() && x.ndim() == 1 && x.dim(0) == dm.d &&
           x.dtype() == k.dtype();
  };
  if (!param_ok(p.w) || !param_ok(p.u))
    throw ShapeError("wkv: w/u must be [d] of matching dtype");
  if (k.dtype() != v.dtype())
    throw ShapeError("wkv: k/v dtype mismatch");
  if (!k.all_finite() || !v.all_finite() || !p.w.all_finite() ||
      !p.u.all_finite())
    throw NumericError("wkv: non-finite input");
  return dm;
}

// [T,d] -> per-channel contiguous [d][T]
template <typename T>
std::vector<T> to_channel_major(const Tensor& x, Dims dm) {
  std::vector<T> out(size_t(dm.t * dm.d));
  auto px = x.data<T>();
  for (int64_t t = 0; t < dm.t; ++t)
    for (int64_t c = 0; c < dm.d; ++c)
      out[size_t(c * dm.t + t)] = px[size_t(t * dm.d + c)];
  return out;
}

template <typename T>
void from_channel_major(const std::vector<T>& buf, Tensor& x, Dims dm) {
  auto px = x.mutable_data<T>();
  for (int64_t t = 0; t < dm.t; ++t)
    for (int64_t c = 0; c < dm.d; ++c)
      px[size_t(t * dm.d + c)] = buf[size_t(c * dm.t + t)];
}

// ---------------------------------------------------------------------------
// Forward kernels (channel-major buffers).
// ---------------------------------------------------------------------------
template <typename T>
void recurrent_fwd(const T* k, const T* v, const T* w, const T* u, T* y,
                   int64_t tt, int64_t d) {
  const T ninf = -std::numeric_limits<T>::infinity();
  for (int64_t c = 0; c < d; ++c) {
    const T* kc = k + c * tt;
    const T* vc = v + c * tt;
    T* yc = y + c * tt;
    T wc = w[c], uc = u[c];
    T a = 0, b = 0, p = ninf;
    for (int64_t t = 0; t < tt; ++t) {
      T kt = kc[t], vt = vc[t];
      T bonus = kt + uc;
      T q = std::max(p, bonus);
      T ef = std::exp(p - q), eb = std::exp(bonus - q);
      yc[t] = (a * ef + vt * eb) / (b * ef + eb);
      T pd = p - wc;
      T pp = std::max(pd, kt);
      T sc = std::exp(pd - pp), se = std::exp(kt - pp);
      a = a * sc + vt * se;
      b = b * sc + se;
      p = pp;
    }
  }
}

template <typename T>
void bidirectional_fwd(const T* k, const T* v, const T* w, const T* u, T* y,
                       int64_t tt, int64_t d, std::vector<T>& sa,
                       std::vector<T>& sb, std::vector<T>& sp) {
  const T ninf = -std::numeric_limits<T>::infinity();
  for (int64_t c = 0; c < d; ++c) {
    const T* kc = k + c * tt;
    const T* vc = v + c * tt;
    T* yc = y + c * tt;
    T wc = w[c], uc = u[c];
    // suffix sweep: state at entry to position t covers i > t
    T a = 0, b = 0, p = ninf;
    for (int64_t t = tt - 1; t >= 0; --t) {
      sa[size_t(t)] = a;
      sb[size_t(t)] = b;
      sp[size_t(t)] = p;
      T kt = kc[t];
      T pd = p - wc;
      T pp = std::max(pd, kt);
      T sc = std::exp(pd - pp), se = std::exp(kt - pp);
      a = a * sc + vc[t] * se;
      b = b * sc + se;
      p = pp;
    }
    // forward merge (prefix + suffix) + bonus.  The association below is
    // load-bearing: prefix/suffix contributions are commuted -- never
    // reassociated -- under sequence reversal, so reversal equivariance
    // holds bitwise.
    a = 0;
    b = 0;
    p = ninf;
    for (int64_t t = 0; t < tt; ++t) {
      T kt = kc[t], vt = vc[t];
      T bonus = kt + uc;
      T q = std::max(std::max(p, sp[size_t(t)]), bonus);
      T ef = std::exp(p - q);
      T es = std::exp(sp[size_t(t)] - q);
      T eb = std::exp(bonus - q);
      T num = (a * ef + sa[size_t(t)] * es) + vt * eb;
      T den = (b * ef + sb[size_t(t)] * es) + eb;
      yc[t] = num / den;
      T pd = p - wc;
      T pp = std::max(pd, kt);
      T sc = std::exp(pd - pp), se = std::exp(kt - pp);
      a = a * sc + vt * se;
      b = b * sc + se;
      p = pp;
    }
  }
}

// ---------------------------------------------------------------------------
// Backward kernels.
// ---------------------------------------------------------------------------
template <typename T>
void recurrent_bwd(const T* k, const T* v, const T* w, const T* u, const T* g,
                   T* gk, T* gv, T* gw, T* gu, int64_t tt, int64_t d) {
  const T ninf = -std::numeric_limits<T>::infinity();
  std::vector<T> ya(static_cast<size_t>(tt)), qa(static_cast<size_t>(tt)), rd(static_cast<size_t>(tt));
  for (int64_t c = 0; c < d; ++c) {
    const T* kc = k + c * tt;
    const T* vc = v + c * tt;
    const T* gc = g + c * tt;
    T* gkc = gk + c * tt;
    T* gvc = gv + c * tt;
    T wc = w[c], uc = u[c];
    T guc = 0, gwc = 0;

    // forward sweep: recompute y/q/1-over-denominator, fold in the w and u
    // gradient terms via distance-weighted accumulators (ah, bh)
    T a = 0, b = 0, ah = 0, bh = 0, p = ninf;
    for (int64_t t = 0; t < tt; ++t) {
      T kt = kc[t], vt = vc[t];
      T bonus = kt + uc;
      T q = std::max(p, bonus);
      T ef = std::exp(p - q), eb = std::exp(bonus - q);
      T den = b * ef + eb;
      T y = (a * ef + vt * eb) / den;
      T r = T(1) / den;
      ya[size_t(t)] = y;
      qa[size_t(t)] = q;
      rd[size_t(t)] = r;
      guc += gc[t] * eb * r * (vt - y);
      gwc += gc[t] * r * ef * (y * bh - ah);
      T pd = p - wc;
      T pp = std::max(pd, kt);
      T sc = std::exp(pd - pp), se = std::exp(kt - pp);
      ah = (ah + a) * sc;
      bh = (bh + b) * sc;
      a = a * sc + vt * se;
      b = b * sc + se;
      p = pp;
    }

    // reverse sweep: decayed sums of G and G*y flow gradient to earlier k/v
    T sg = 0, sh = 0, m = ninf;
    for (int64_t i = tt - 1; i >= 0; --i) {
      T ki = kc[i], vi = vc[i], yi = ya[size_t(i)];
      T gi = gc[i] * rd[size_t(i)];  // G_i mantissa at exponent -q_i
      T self = gi * std::exp(ki + uc - qa[size_t(i)]);
      T scale = std::exp(ki + m);
      gvc[i] = scale * sg + self;
      gkc[i] = scale * (vi * sg - sh) + self * (vi - yi);
      T md = m - wc, ci = -qa[size_t(i)];
      T mm = std::max(md, ci);
      T s0 = std::exp(md - mm), s1 = std::exp(ci - mm);
      sg = sg * s0 + gi * s1;
      sh = sh * s0 + gi * yi * s1;
      m = mm;
    }
    gw[c] = gwc;
    gu[c] = guc;
  }
}

template <typename T>
void bidirectional_bwd(const T* k, const T* v, const T* w, const T* u,
                       const T* g, T* gk, T* gv, T* gw, T* gu, int64_t tt,
                       int64_t d) {
  const T ninf = -std::numeric_limits<T>::infinity();
  std::vector<T> sa(static_cast<size_t>(tt)), sb(static_cast<size_t>(tt)), sah(static_cast<size_t>(tt)),
      sbh(static_cast<size_t>(tt)), sp(static_cast<size_t>(tt));
  std::vector<T> ya(static_cast<size_t>(tt)), qa(static_cast<size_t>(tt)), rd(static_cast<size_t>(tt));
  for (int64_t c = 0; c < d; ++c) {
    const T* kc = k + c * tt;
    const T* vc = v + c * tt;
    const T* gc = g + c * tt;
    T* gkc = gk + c * tt;
    T* gvc = gv + c * tt;
    T wc = w[c], uc = u[c];
    T guc = 0, gwc = 0;

    // suffix states, with distance-weighted shadows for the w gradient
    {
      T a = 0, b = 0, ah = 0, bh = 0, p = ninf;
      for (int64_t t = tt - 1; t >= 0; --t) {
        sa[size_t(t)] = a;
        sb[size_t(t)] = b;
        sah[size_t(t)] = ah;
        sbh[size_t(t)] = bh;
        sp[size_t(t)] = p;
        T kt = kc[t];
        T pd = p - wc;
        T pp = std::max(pd, kt);
        T sc = std::exp(pd - pp), se = std::exp(kt - pp);
        ah = (ah + a) * sc;
        bh = (bh + b) * sc;
        a = a * sc + vc[t] * se;
        b = b * sc + se;
        p = pp;
      }
    }

    // forward merge: y/q/r stash + u,w gradient accumulation
    {
      T a = 0, b = 0, ah = 0, bh = 0, p = ninf;
      for (int64_t t = 0; t < tt; ++t) {
        T kt = kc[t], vt = vc[t];
        T bonus = kt + uc;
        T q = std::max(std::max(p, sp[size_t(t)]), bonus);
        T ef = std::exp(p - q);
        T es = std::exp(sp[size_t(t)] - q);
        T eb = std::exp(bonus - q);
        T den = (b * ef + sb[size_t(t)] * es) + eb;
        T y = ((a * ef + sa[size_t(t)] * es) + vt * eb) / den;
        T r = T(1) / den;
        ya[size_t(t)] = y;
        qa[size_t(t)] = q;
        rd[size_t(t)] = r;
        guc += gc[t] * eb * r * (vt - y);
        gwc += gc[t] * r *
               (y * (bh * ef + sbh[size_t(t)] * es) -
                (ah * ef + sah[size_t(t)] * es));
        T pd = p - wc;
        T pp = std::max(pd, kt);
        T sc = std::exp(pd - pp), se = std::exp(kt - pp);
        ah = (ah + a) * sc;
        bh = (bh + b) * sc;
        a = a * sc + vt * se;
        b = b * sc + se;
        p = pp;
      }
    }

    // reverse sweep: gradient from later outputs (t > i), plus self term
    {
      T sg = 0, sh = 0, m = ninf;
      for (int64_t i = tt - 1; i >= 0; --i) {
        T ki = kc[i], vi = vc[i], yi = ya[size_t(i)];
        T gi = gc[i] * rd[size_t(i)];
        T self = gi * std::exp(ki + uc - qa[size_t(i)]);
        T scale = std::exp(ki + m);
        gvc[i] = scale * sg + self;
        gkc[i] = scale * (vi * sg - sh) + self * (vi - yi);
        T md = m - wc, ci = -qa[size_t(i)];
        T mm = std::max(md, ci);
        T s0 = std::exp(md - mm), s1 = std::exp(ci - mm);
        sg = sg * s0 + gi * s1;
        sh = sh * s0 + gi * yi * s1;
        m = mm;
      }
    }

    // forward sweep: gradient from earlier outputs (t < i)
    {
      T sg = 0, sh = 0, m = ninf;
      for (int64_t i = 0; i < tt; ++i) {
        T ki = kc[i], vi = vc[i], yi = ya[size_t(i)];
        T gi = gc[i] * rd[size_t(i)];
        T scale = std::exp(ki + m);
        gvc[i] += scale * sg;
        gkc[i] += scale * (vi * sg - sh);
        T md = m - wc, ci = -qa[size_t(i)];
        T mm = std::max(md, ci);
        T s0 = std::exp(md - mm), s1 = std::exp(ci - mm);
        sg = sg * s0 + gi * s1;
        sh = sh * s0 + gi * yi * s1;
        m = mm;
      }
    }
    gw[c] = gwc;
    gu[c] = guc;
  }
}

// ---------------------------------------------------------------------------
// Tape plumbing shared by both streaming forms.
// ---------------------------------------------------------------------------
WkvGrads run_backward(const Tensor& k, const Tensor& v, const WkvParams& p,
                      const Tensor& grad_out, bool bidir) {
  Dims dm = validate(k, v, p);
  if (!same_shape(grad_out.shape(), k.shape()))
    throw ShapeError("wkv backward: upstream gradient shape mismatch");
  WkvGrads out;
  out.k = Tensor::zeros(k.shape(), k.dtype());
  out.v = Tensor::zeros(k.shape(), k.dtype());
  out.w = Tensor::zeros(p.w.shape(), k.dtype());
  out.u = Tensor::zeros(p.u.shape(), k.dtype());
  auto run = [&](auto tag) {
    using T = decltype(tag);
    auto kb = to_channel_major<T>(k, dm);
    auto vb = to_channel_major<T>(v, dm);
    auto gb = to_channel_major<T>(grad_out, dm);
    std::vector<T> gkb(kb.size()), gvb(kb.size());
    if (bidir)
      bidirectional_bwd<T>(kb.data(), vb.data(), p.w.data<T>().data(),
                           p.u.data<T>().data(), gb.data(), gkb.data(),
                           gvb.data(), out.w.mutable_data<T>().data(),
                           out.u.mutable_data<T>().data(), dm.t, dm.d);
    else
      recurrent_bwd<T>(kb.data(), vb.data(), p.w.data<T>().data(),
                       p.u.data<T>().data(), gb.data(), gkb.data(), gvb.data(),
                       out.w.mutable_data<T>().data(),
                       out.u.mutable_data<T>().data(), dm.t, dm.d);
    from_channel_major<T>(gkb, out.k, dm);
    from_channel_major<T>(gvb, out.v, dm);
  };
  if (k.dtype() == Dtype::F32)
    run(float{});
  else
    run(double{});
  opcount::add(uint64_t(dm.t * dm.d) *
               (bidir ? 2 * kOpsPerCellBidirectional
                      : 2 * kOpsPerCellRecurrent));
  return out;
}

Tensor run_forward(const Tensor& k, const Tensor& v, const WkvParams& p,
                   bool bidir) {
  Dims dm = validate(k, v, p);
  Tensor out = Tensor::zeros(k.shape(), k.dtype());
  auto run = [&](auto tag) {
    using T = decltype(tag);
    auto kb = to_channel_major<T>(k, dm);
    auto vb = to_channel_major<T>(v, dm);
    std::vector<T> yb(kb.size());
    if (bidir) {
      std::vector<T> sa(static_cast<size_t>(dm.t)), sb(static_cast<size_t>(dm.t)), sp(static_cast<size_t>(dm.t));
      bidirectional_fwd<T>(kb.data(), vb.data(), p.w.data<T>().data(),
                           p.u.data<T>().data(), yb.data(), dm.t, dm.d, sa, sb,
                           sp);
    } else {
      recurrent_fwd<T>(kb.data(), vb.data(), p.w.data<T>().data(),
                       p.u.data<T>().data(), yb.data(), dm.t, dm.d);
    }
    from_channel_major<T>(yb, out, dm);
  };
  if (k.dtype() == Dtype::F32)
    run(float{});
  else
    run(double{});
  opcount::add(uint64_t(dm.t * dm.d) *
               (bidir ? kOpsPerCellBidirectional : kOpsPerCellRecurrent));

  // single tape node for the whole kernel
  Tape* tape = Tape::active();
  if (tape && tape->recording()) {
    int32_t kid = tape->id_of(k), vid = tape->id_of(v);
    int32_t wid = tape->id_of(p.w), uid = tape->id_of(p.u);
    if (kid >= 0 || vid >= 0 || wid >= 0 || uid >= 0) {
      Tensor kc = k, vc = v;
      WkvParams pc = p;
      int32_t oid = tape->register_value(out);
      tape->push_node([=](Tape& t) {
        const Tensor* g = t.grad_ptr(oid);
        if (!g) return;
        WkvGrads gr = run_backward(kc, vc, pc, *g, bidir);
        if (kid >= 0) t.accumulate(kid, std::move(gr.k));
        if (vid >= 0) t.accumulate(vid, std::move(gr.v));
        if (wid >= 0) t.accumulate(wid, std::move(gr.w));
        if (uid >= 0) t.accumulate(uid, std::move(gr.u));
      });
    }
  }
  return out;
}

}  // namespace

Tensor naive(const Tensor& k, const Tensor& v, const WkvParams& p,
             bool bidirectional) {
  Dims dm = validate(k, v, p);
  Tensor out = Tensor::zeros(k.shape(), k.dtype());
  // Reference path: double internally regardless of storage dtype, full
  // max-subtraction per output element.
  int64_t tt = dm.t, d = dm.d;
  uint64_t pairs = 0;
  for (int64_t c = 0; c < d; ++c) {
    double wc = p.w.at(c), uc = p.u.at(c);
    for (int64_t t = 0; t < tt; ++t) {
      const int64_t lo = 0;
      int64_t hi = bidirectional ? tt - 1 : t;
      double m = -std::numeric_limits<double>::infinity();
      for (int64_t i = lo; i <= hi; ++i) {
        double dist = double(i > t ? i - t : t - i);
        double e = (i == t) ? k.at(i * d + c) + uc
                            : k.at(i * d + c) - (dist - 1.0) * wc;
        if (e > m) m = e;
      }
      double num = 0, den = 0;
      for (int64_t i = lo; i <= hi; ++i) {
        double dist = double(i > t ? i - t : t - i);
        double e = (i == t) ? k.at(i * d + c) + uc
                            : k.at(i * d + c) - (dist - 1.0) * wc;
        double ww = std::exp(e - m);
        num += ww * v.at(i * d + c);
        den += ww;
      }
      out.set(t * d + c, num / den);
      pairs += uint64_t(hi - lo + 1);
    }
  }
  opcount::add(pairs * kOpsPerPairNaive + uint64_t(tt * d) * 4);
  return out;
}

Tensor recurrent(const Tensor& k, const Tensor& v, const WkvParams& p) {
  return run_forward(k, v, p, false);
}

Tensor bidirectional(const Tensor& k, const Tensor& v, const WkvParams& p) {
  return run_forward(k, v, p, true);
}

WkvGrads backward_recurrent(const Tensor& k, const Tensor& v,
                            const WkvParams& p, const Tensor& grad_out) {
  return run_backward(k, v, p, grad_out, false);
}

WkvGrads backward_bidirectional(const Tensor& k, const Tensor& v,
                                const WkvParams& p, const Tensor& grad_out) {
  return run_backward(k, v, p, grad_out, true);
}

uint64_t ops_per_cell_recurrent() { return kOpsPerCellRecurrent; }
uint64_t ops_per_cell_bidirectional() { return kOpsPerCellBidirectional; }
uint64_t ops_per_pair_naive() { return kOpsPerPairNaive; }

}  // namespace crwkv::wkv
