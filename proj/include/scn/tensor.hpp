#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "scn/common.hpp"

namespace scn {

// Dense NCHW tensor, row-major, contiguous. Batch dimension is carried for
// API symmetry; the conv kernels below operate per batch item.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w) { resize(n, c, h, w); }

  void resize(int n, int c, int h, int w) {
    SCN_CHECK(n >= 0 && c >= 0 && h >= 0 && w >= 0, "tensor dims must be non-negative");
    n_ = n; c_ = c; h_ = h; w_ = w;
    data_.assign(static_cast<size_t>(n) * c * h * w, T(0));
  }

  static Tensor filled(int n, int c, int h, int w, T v) {
    Tensor t(n, c, h, w);
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  long long numel() const { return static_cast<long long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& at(int in, int ic, int iy, int ix) {
    return data_[((static_cast<size_t>(in) * c_ + ic) * h_ + iy) * w_ + ix];
  }
  const T& at(int in, int ic, int iy, int ix) const {
    return data_[((static_cast<size_t>(in) * c_ + ic) * h_ + iy) * w_ + ix];
  }

  // pointer to the start of one (n, c) plane
  T* plane(int in, int ic) { return data_.data() + (static_cast<size_t>(in) * c_ + ic) * h_ * w_; }
  const T* plane(int in, int ic) const {
    return data_.data() + (static_cast<size_t>(in) * c_ + ic) * h_ * w_;
  }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  void zero() { std::fill(data_.begin(), data_.end(), T(0)); }

  void add_scaled(const Tensor& o, T s) {
    SCN_CHECK(same_shape(o), "add_scaled: shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> r(n_, c_, h_, w_);
    for (size_t i = 0; i < data_.size(); ++i) r.data()[i] = static_cast<U>(data_[i]);
    return r;
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const { return cat("(", n_, ",", c_, ",", h_, ",", w_, ")"); }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

struct ConvParams {
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  int dh = 1, dw = 1;

  static ConvParams square(int k, int s = 1, int p = 0, int d = 1) {
    return ConvParams{k, k, s, s, p, p, d, d};
  }
};

inline void validate(const ConvParams& p) {
  SCN_CHECK(p.kh > 0 && p.kw > 0, "kernel dims must be positive");
  SCN_CHECK(p.sh > 0 && p.sw > 0, "stride must be positive");
  SCN_CHECK(p.ph >= 0 && p.pw >= 0, "padding must be non-negative");
  SCN_CHECK(p.dh > 0 && p.dw > 0, "dilation must be positive");
}

// floor((h + 2p - d*(k-1) - 1) / s) + 1, and the same for width.
inline std::pair<int, int> conv_out_dims(int h, int w, const ConvParams& p) {
  validate(p);
  int oh = (h + 2 * p.ph - p.dh * (p.kh - 1) - 1) / p.sh + 1;
  int ow = (w + 2 * p.pw - p.dw * (p.kw - 1) - 1) / p.sw + 1;
  SCN_CHECK(h + 2 * p.ph - p.dh * (p.kh - 1) - 1 >= 0 && oh >= 1 && ow >= 1,
            "conv output dims must be >= 1 (input ", h, "x", w, ", k=", p.kh, "x", p.kw,
            ", s=", p.sh, ", p=", p.ph, ", d=", p.dh, ")");
  return {oh, ow};
}

// (h-1)*s - 2p + d*(k-1) + 1, and the same for width.
inline std::pair<int, int> deconv_out_dims(int h, int w, const ConvParams& p) {
  validate(p);
  int oh = (h - 1) * p.sh - 2 * p.ph + p.dh * (p.kh - 1) + 1;
  int ow = (w - 1) * p.sw - 2 * p.pw + p.dw * (p.kw - 1) + 1;
  SCN_CHECK(oh >= 1 && ow >= 1, "deconv output dims must be >= 1");
  return {oh, ow};
}

// Unfolded convolution operand: one row per output location (row-major over
// the output grid), one column per (in_channel, ky, kx) with column index
// c*kh*kw + ky*kw + kx. This matches a row-major flattening of conv weights
// (out_c, in_c, kh, kw), so conv is a plain row-times-matrix product.
template <typename T>
struct FeatureMatrix {
  int rows = 0, cols = 0;
  int out_h = 0, out_w = 0;
  std::vector<T> data;

  FeatureMatrix() = default;
  FeatureMatrix(int r, int c, int oh, int ow)
      : rows(r), cols(c), out_h(oh), out_w(ow), data(static_cast<size_t>(r) * c, T(0)) {}

  T* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const T* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
};

// Batch item `in` of x. Out-of-bounds taps read as zero (zero padding).
template <typename T>
FeatureMatrix<T> im2col(const Tensor<T>& x, int in, const ConvParams& p) {
  SCN_CHECK(in >= 0 && in < x.n(), "im2col: batch index out of range");
  auto [oh, ow] = conv_out_dims(x.h(), x.w(), p);
  FeatureMatrix<T> m(oh * ow, x.c() * p.kh * p.kw, oh, ow);
  const int h = x.h(), w = x.w();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* row = m.row(oy * ow + ox);
      int base_y = oy * p.sh - p.ph;
      int base_x = ox * p.sw - p.pw;
      for (int ic = 0; ic < x.c(); ++ic) {
        const T* pl = x.plane(in, ic);
        T* dst = row + ic * p.kh * p.kw;
        for (int ky = 0; ky < p.kh; ++ky) {
          int iy = base_y + ky * p.dh;
          if (iy < 0 || iy >= h) {
            // row of taps entirely out of bounds vertically
            continue;  // dst already zero-initialised
          }
          const T* src = pl + static_cast<size_t>(iy) * w;
          for (int kx = 0; kx < p.kw; ++kx) {
            int ix = base_x + kx * p.dw;
            dst[ky * p.kw + kx] = (ix < 0 || ix >= w) ? T(0) : src[ix];
          }
        }
      }
    }
  }
  return m;
}

// Inverse of the row layout: rows indexed row-major over (out_h, out_w),
// columns are output channels. Writes batch item `in` of `out`.
template <typename T>
void col2im(const FeatureMatrix<T>& m, int in, Tensor<T>& out) {
  SCN_CHECK(m.rows == m.out_h * m.out_w, "col2im: row count mismatch");
  SCN_CHECK(out.h() == m.out_h && out.w() == m.out_w && out.c() == m.cols,
            "col2im: target shape mismatch");
  for (int oc = 0; oc < m.cols; ++oc) {
    T* pl = out.plane(in, oc);
    for (int r = 0; r < m.rows; ++r) pl[r] = m.row(r)[oc];
  }
}

// Scatter-add of an unfolded gradient back onto the (padded) input grid.
// Exact adjoint of im2col.
template <typename T>
void col2im_accum(const FeatureMatrix<T>& g, int in, const ConvParams& p, Tensor<T>& gx) {
  const int h = gx.h(), w = gx.w();
  SCN_CHECK(g.cols == gx.c() * p.kh * p.kw, "col2im_accum: column count mismatch");
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      const T* row = g.row(oy * g.out_w + ox);
      int base_y = oy * p.sh - p.ph;
      int base_x = ox * p.sw - p.pw;
      for (int ic = 0; ic < gx.c(); ++ic) {
        T* pl = gx.plane(in, ic);
        const T* src = row + ic * p.kh * p.kw;
        for (int ky = 0; ky < p.kh; ++ky) {
          int iy = base_y + ky * p.dh;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < p.kw; ++kx) {
            int ix = base_x + kx * p.dw;
            if (ix < 0 || ix >= w) continue;
            pl[static_cast<size_t>(iy) * w + ix] += src[ky * p.kw + kx];
          }
        }
      }
    }
  }
}

// Weights (out_c, in_c, kh, kw) transposed to K x out_c with K = in_c*kh*kw.
// Layout lets the row kernel below accumulate k-ascending while vectorising
// over output channels.
template <typename T>
std::vector<T> transpose_weights(const Tensor<T>& w) {
  const int oc = w.n();
  const long long k = w.numel() / oc;
  std::vector<T> wt(static_cast<size_t>(k) * oc);
  const T* src = w.data();
  for (int o = 0; o < oc; ++o)
    for (long long i = 0; i < k; ++i) wt[static_cast<size_t>(i) * oc + o] = src[o * k + i];
  return wt;
}

// One output row: out[oc] = bias[oc] + sum_k row[k] * wt[k][oc], k ascending.
// Both the dense and the mask-selected conv paths call exactly this, which is
// what makes them bit-identical at selected locations. Keep the loop order.
template <typename T>
inline void conv_row_product(const T* row, const std::vector<T>& wt, int k, int oc,
                             const T* bias, T* out) {
  if (bias) {
    std::memcpy(out, bias, sizeof(T) * oc);
  } else {
    std::memset(out, 0, sizeof(T) * oc);
  }
  for (int i = 0; i < k; ++i) {
    const T a = row[i];
    if (a == T(0)) continue;  // padding-heavy rows skip work; 0*w adds exactly 0
    const T* wrow = wt.data() + static_cast<size_t>(i) * oc;
    for (int o = 0; o < oc; ++o) out[o] += a * wrow[o];
  }
}

// Dense conv, batch-aware. w: (out_c, in_c, kh, kw); b: (1, out_c, 1, 1) or
// empty for no bias. Cross-correlation (no kernel flip), zero padding.
template <typename T>
Tensor<T> conv2d_dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                       const ConvParams& p) {
  SCN_CHECK(w.c() == x.c(), "conv2d: weight in_channels ", w.c(), " != input channels ", x.c());
  SCN_CHECK(w.h() == p.kh && w.w() == p.kw, "conv2d: weight kernel dims disagree with params");
  const bool with_bias = !b.empty();
  if (with_bias)
    SCN_CHECK(b.numel() == w.n(), "conv2d: bias size ", b.numel(), " != out_channels ", w.n());
  auto [oh, ow] = conv_out_dims(x.h(), x.w(), p);
  const int oc = w.n();
  const int k = x.c() * p.kh * p.kw;
  const std::vector<T> wt = transpose_weights(w);
  Tensor<T> y(x.n(), oc, oh, ow);
  FeatureMatrix<T> out_rows(oh * ow, oc, oh, ow);
  for (int in = 0; in < x.n(); ++in) {
    FeatureMatrix<T> cols = im2col(x, in, p);
    for (int r = 0; r < cols.rows; ++r)
      conv_row_product(cols.row(r), wt, k, oc, with_bias ? b.data() : nullptr, out_rows.row(r));
    col2im(out_rows, in, y);
  }
  return y;
}

// d(loss)/d(input) for conv2d_dense. in_h/in_w give the forward input size.
template <typename T>
Tensor<T> conv2d_bwd_data(const Tensor<T>& gy, const Tensor<T>& w, const ConvParams& p,
                          int in_c, int in_h, int in_w) {
  const int oc = w.n();
  SCN_CHECK(gy.c() == oc, "conv2d_bwd_data: grad channels mismatch");
  SCN_CHECK(w.c() == in_c, "conv2d_bwd_data: weight in_channels mismatch");
  const int k = in_c * p.kh * p.kw;
  Tensor<T> gx(gy.n(), in_c, in_h, in_w);
  FeatureMatrix<T> gcol(gy.h() * gy.w(), k, gy.h(), gy.w());
  const T* wdata = w.data();
  for (int in = 0; in < gy.n(); ++in) {
    std::fill(gcol.data.begin(), gcol.data.end(), T(0));
    for (int r = 0; r < gcol.rows; ++r) {
      T* grow = gcol.row(r);
      const int oy = r / gy.w(), ox = r % gy.w();
      for (int o = 0; o < oc; ++o) {
        const T g = gy.at(in, o, oy, ox);
        if (g == T(0)) continue;
        const T* wrow = wdata + static_cast<size_t>(o) * k;
        for (int i = 0; i < k; ++i) grow[i] += g * wrow[i];
      }
    }
    col2im_accum(gcol, in, p, gx);
  }
  return gx;
}

// d(loss)/d(weights) and d(loss)/d(bias), accumulated into gw/gb.
template <typename T>
void conv2d_bwd_filter(const Tensor<T>& gy, const Tensor<T>& x, const ConvParams& p,
                       Tensor<T>& gw, Tensor<T>* gb) {
  const int oc = gy.c();
  const int k = x.c() * p.kh * p.kw;
  SCN_CHECK(gw.n() == oc && gw.numel() == static_cast<long long>(oc) * k,
            "conv2d_bwd_filter: grad weight shape mismatch");
  T* gwd = gw.data();
  for (int in = 0; in < x.n(); ++in) {
    FeatureMatrix<T> cols = im2col(x, in, p);
    SCN_CHECK(cols.out_h == gy.h() && cols.out_w == gy.w(),
              "conv2d_bwd_filter: forward/grad spatial mismatch");
    for (int o = 0; o < oc; ++o) {
      const T* gpl = gy.plane(in, o);
      T* gwrow = gwd + static_cast<size_t>(o) * k;
      T gbias = T(0);
      for (int r = 0; r < cols.rows; ++r) {
        const T g = gpl[r];
        if (g == T(0)) continue;
        gbias += g;
        const T* row = cols.row(r);
        for (int i = 0; i < k; ++i) gwrow[i] += g * row[i];
      }
      if (gb) gb->data()[o] += gbias;
    }
  }
}

// Transposed conv. w: (in_c, out_c, kh, kw); strided upsampling uses the
// conv2d_bwd_data machinery with roles swapped. b: (1, out_c, 1, 1) or empty.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                   const ConvParams& p) {
  SCN_CHECK(w.n() == x.c(), "deconv2d: weight in_channels ", w.n(), " != input channels ", x.c());
  SCN_CHECK(w.h() == p.kh && w.w() == p.kw, "deconv2d: weight kernel dims disagree with params");
  auto [oh, ow] = deconv_out_dims(x.h(), x.w(), p);
  const int oc = w.c();
  Tensor<T> y = conv2d_bwd_data(x, w, p, oc, oh, ow);
  if (!b.empty()) {
    SCN_CHECK(b.numel() == oc, "deconv2d: bias size mismatch");
    for (int in = 0; in < y.n(); ++in)
      for (int c = 0; c < oc; ++c) {
        T* pl = y.plane(in, c);
        const T bv = b.data()[c];
        for (int i = 0; i < oh * ow; ++i) pl[i] += bv;
      }
  }
  return y;
}

template <typename T>
Tensor<T> deconv2d_bwd_data(const Tensor<T>& gy, const Tensor<T>& w, const ConvParams& p) {
  // adjoint of conv2d_bwd_data is the forward conv, without bias
  Tensor<T> none;
  return conv2d_dense(gy, w, none, p);
}

template <typename T>
void deconv2d_bwd_filter(const Tensor<T>& gy, const Tensor<T>& x, const ConvParams& p,
                         Tensor<T>& gw, Tensor<T>* gb) {
  // gw[ic][ocdeconv...] accumulates x (as the "output grad") against gy (as
  // the "input"): same contraction as conv2d_bwd_filter with roles swapped.
  conv2d_bwd_filter(x, gy, p, gw, static_cast<Tensor<T>*>(nullptr));
  if (gb) {
    for (int in = 0; in < gy.n(); ++in)
      for (int c = 0; c < gy.c(); ++c) {
        const T* pl = gy.plane(in, c);
        T s = T(0);
        for (int i = 0; i < gy.h() * gy.w(); ++i) s += pl[i];
        gb->data()[c] += s;
      }
  }
}

// Output extent of pooling; ceil_mode rounds partial windows up, and the
// final clamp drops a window that would start entirely in the padding.
inline int pool_out_dim(int d, int window, int stride, int pad, bool ceil_mode) {
  SCN_CHECK(window > 0 && stride > 0 && pad >= 0, "pool: bad window/stride/pad");
  SCN_CHECK(window <= d + 2 * pad, "pool: window ", window, " larger than padded input ", d + 2 * pad);
  int out;
  if (ceil_mode) {
    out = (d + 2 * pad - window + stride - 1) / stride + 1;
    if ((out - 1) * stride >= d + pad) --out;
  } else {
    out = (d + 2 * pad - window) / stride + 1;
  }
  SCN_CHECK(out >= 1, "pool: output dim must be >= 1");
  return out;
}

// Per-channel (depthwise) conv: channel c of the output sees only channel c
// of the input. w: (c, 1, kh, kw); b: (1, c, 1, 1) or empty.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           const ConvParams& p) {
  SCN_CHECK(w.n() == x.c() && w.c() == 1, "depthwise_conv2d: weight shape must be (c,1,kh,kw)");
  if (!b.empty()) SCN_CHECK(b.numel() == x.c(), "depthwise_conv2d: bias size mismatch");
  auto [oh, ow] = conv_out_dims(x.h(), x.w(), p);
  Tensor<T> y(x.n(), x.c(), oh, ow);
  for (int in = 0; in < x.n(); ++in)
    for (int c = 0; c < x.c(); ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = b.empty() ? T(0) : b.data()[c];
          for (int ky = 0; ky < p.kh; ++ky)
            for (int kx = 0; kx < p.kw; ++kx) {
              const int iy = oy * p.sh - p.ph + ky * p.dh;
              const int ix = ox * p.sw - p.pw + kx * p.dw;
              if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
              acc += x.at(in, c, iy, ix) * w.at(c, 0, ky, kx);
            }
          y.at(in, c, oy, ox) = acc;
        }
  return y;
}

template <typename T>
void depthwise_conv2d_bwd(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& w,
                          const ConvParams& p, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  for (int in = 0; in < gy.n(); ++in)
    for (int c = 0; c < gy.c(); ++c)
      for (int oy = 0; oy < gy.h(); ++oy)
        for (int ox = 0; ox < gy.w(); ++ox) {
          const T g = gy.at(in, c, oy, ox);
          if (g == T(0)) continue;
          if (gb) gb->data()[c] += g;
          for (int ky = 0; ky < p.kh; ++ky)
            for (int kx = 0; kx < p.kw; ++kx) {
              const int iy = oy * p.sh - p.ph + ky * p.dh;
              const int ix = ox * p.sw - p.pw + kx * p.dw;
              if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
              if (gw) gw->at(c, 0, ky, kx) += g * x.at(in, c, iy, ix);
              if (gx) gx->at(in, c, iy, ix) += g * w.at(c, 0, ky, kx);
            }
        }
}

// Max pooling. Ties go to the first element in scan order (ky, kx ascending),
// which is also where the gradient routes. Padding cells never win (windows
// are clipped to the input before the scan).
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int window, int stride, int pad = 0,
                    bool ceil_mode = false, std::vector<int>* argmax = nullptr) {
  const int oh = pool_out_dim(x.h(), window, stride, pad, ceil_mode);
  const int ow = pool_out_dim(x.w(), window, stride, pad, ceil_mode);
  Tensor<T> y(x.n(), x.c(), oh, ow);
  if (argmax) argmax->assign(static_cast<size_t>(y.numel()), -1);
  size_t oi = 0;
  for (int in = 0; in < x.n(); ++in)
    for (int c = 0; c < x.c(); ++c) {
      const T* pl = x.plane(in, c);
      T* op = y.plane(in, c);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const int y0 = std::max(0, oy * stride - pad), x0 = std::max(0, ox * stride - pad);
          const int y1 = std::min(oy * stride - pad + window, x.h());
          const int x1 = std::min(ox * stride - pad + window, x.w());
          SCN_CHECK(y0 < y1 && x0 < x1, "maxpool2d: empty window");
          T best = pl[static_cast<size_t>(y0) * x.w() + x0];
          int best_idx = y0 * x.w() + x0;
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) {
              const T v = pl[static_cast<size_t>(iy) * x.w() + ix];
              if (v > best) {
                best = v;
                best_idx = iy * x.w() + ix;
              }
            }
          op[oy * ow + ox] = best;
          if (argmax) (*argmax)[oi] = best_idx;
          ++oi;
        }
    }
  return y;
}

template <typename T>
Tensor<T> maxpool2d_bwd(const Tensor<T>& gy, const std::vector<int>& argmax, int in_h, int in_w) {
  Tensor<T> gx(gy.n(), gy.c(), in_h, in_w);
  SCN_CHECK(argmax.size() == static_cast<size_t>(gy.numel()), "maxpool2d_bwd: argmax size mismatch");
  size_t oi = 0;
  for (int in = 0; in < gy.n(); ++in)
    for (int c = 0; c < gy.c(); ++c) {
      T* gpl = gx.plane(in, c);
      const T* gyp = gy.plane(in, c);
      for (int i = 0; i < gy.h() * gy.w(); ++i) gpl[argmax[oi++]] += gyp[i];
    }
  return gx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  T* d = x.data();
  for (long long i = 0; i < x.numel(); ++i) d[i] = d[i] > T(0) ? d[i] : T(0);
}

// Gate on the post-activation sign: out > 0 iff pre > 0 for relu.
template <typename T>
void relu_bwd_inplace(Tensor<T>& gy, const Tensor<T>& out) {
  SCN_CHECK(gy.same_shape(out), "relu_bwd: shape mismatch");
  T* g = gy.data();
  const T* o = out.data();
  for (long long i = 0; i < gy.numel(); ++i)
    if (!(o[i] > T(0))) g[i] = T(0);
}

// Inference-form batch norm folded to scale/shift per channel.
template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const std::vector<T>& gamma,
                          const std::vector<T>& beta, const std::vector<T>& mean,
                          const std::vector<T>& var, T eps = T(1e-5)) {
  SCN_CHECK(gamma.size() == static_cast<size_t>(x.c()) && beta.size() == gamma.size() &&
                mean.size() == gamma.size() && var.size() == gamma.size(),
            "batchnorm_infer: per-channel vector size mismatch");
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  for (int in = 0; in < x.n(); ++in)
    for (int c = 0; c < x.c(); ++c) {
      const T scale = gamma[c] / std::sqrt(var[c] + eps);
      const T shift = beta[c] - scale * mean[c];
      const T* sp = x.plane(in, c);
      T* dp = y.plane(in, c);
      for (int i = 0; i < x.h() * x.w(); ++i) dp[i] = scale * sp[i] + shift;
    }
  return y;
}

template <typename T>
T sigmoid(T v) {
  if (v >= T(0)) {
    const T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(v);
  return e / (T(1) + e);
}

// Bilinear resize, half-pixel centers, no corner alignment. Weights depend
// only on the geometry, so the backward pass is the exact transpose.
struct BilinearTap {
  int lo;      // floor source index
  double frac; // weight of lo+1 (clamped to the edge)
};

inline std::vector<BilinearTap> bilinear_taps(int in_dim, int out_dim) {
  std::vector<BilinearTap> taps(out_dim);
  const double scale = static_cast<double>(in_dim) / out_dim;
  for (int o = 0; o < out_dim; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(src);
    if (lo > in_dim - 1) lo = in_dim - 1;
    double frac = src - lo;
    if (lo == in_dim - 1) frac = 0.0;
    taps[o] = {lo, frac};
  }
  return taps;
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int out_h, int out_w) {
  const auto ty = bilinear_taps(x.h(), out_h);
  const auto tx = bilinear_taps(x.w(), out_w);
  Tensor<T> y(x.n(), x.c(), out_h, out_w);
  for (int in = 0; in < x.n(); ++in)
    for (int c = 0; c < x.c(); ++c) {
      const T* sp = x.plane(in, c);
      T* dp = y.plane(in, c);
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = ty[oy].lo, y1 = std::min(y0 + 1, x.h() - 1);
        const T fy = static_cast<T>(ty[oy].frac);
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = tx[ox].lo, x1 = std::min(x0 + 1, x.w() - 1);
          const T fx = static_cast<T>(tx[ox].frac);
          const T v00 = sp[static_cast<size_t>(y0) * x.w() + x0];
          const T v01 = sp[static_cast<size_t>(y0) * x.w() + x1];
          const T v10 = sp[static_cast<size_t>(y1) * x.w() + x0];
          const T v11 = sp[static_cast<size_t>(y1) * x.w() + x1];
          dp[static_cast<size_t>(oy) * out_w + ox] =
              (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) + fy * ((T(1) - fx) * v10 + fx * v11);
        }
      }
    }
  return y;
}

template <typename T>
Tensor<T> bilinear_upsample_bwd(const Tensor<T>& gy, int in_h, int in_w) {
  const auto ty = bilinear_taps(in_h, gy.h());
  const auto tx = bilinear_taps(in_w, gy.w());
  Tensor<T> gx(gy.n(), gy.c(), in_h, in_w);
  for (int in = 0; in < gy.n(); ++in)
    for (int c = 0; c < gy.c(); ++c) {
      T* gp = gx.plane(in, c);
      const T* gyp = gy.plane(in, c);
      for (int oy = 0; oy < gy.h(); ++oy) {
        const int y0 = ty[oy].lo, y1 = std::min(y0 + 1, in_h - 1);
        const T fy = static_cast<T>(ty[oy].frac);
        for (int ox = 0; ox < gy.w(); ++ox) {
          const int x0 = tx[ox].lo, x1 = std::min(x0 + 1, in_w - 1);
          const T fx = static_cast<T>(tx[ox].frac);
          const T g = gyp[static_cast<size_t>(oy) * gy.w() + ox];
          gp[static_cast<size_t>(y0) * in_w + x0] += (T(1) - fy) * (T(1) - fx) * g;
          gp[static_cast<size_t>(y0) * in_w + x1] += (T(1) - fy) * fx * g;
          gp[static_cast<size_t>(y1) * in_w + x0] += fy * (T(1) - fx) * g;
          gp[static_cast<size_t>(y1) * in_w + x1] += fy * fx * g;
        }
      }
    }
  return gx;
}

}  // namespace scn
