#pragma once

#include <vector>

#include "scn/common.hpp"
#include "scn/mask.hpp"
#include "scn/tensor.hpp"

namespace scn {

// Work done by the sparse kernels, reported per invocation and merged by the
// caller. No shared mutable state, so concurrent invocations stay correct.
struct WorkMeter {
  long long row_products = 0;  // selected rows actually multiplied
  long long macs = 0;          // multiply-accumulates performed in those rows

  void merge(const WorkMeter& o) {
    row_products += o.row_products;
    macs += o.macs;
  }
};

// Row indices of set mask bits, ascending in row-major output order. This is
// the one ordering contract shared by select and scatter.
inline std::vector<int> selected_rows(const SaliencyMask& mask) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(mask.ones()));
  for (int y = 0; y < mask.h(); ++y)
    for (int x = 0; x < mask.w(); ++x)
      if (mask.bit(y, x)) idx.push_back(y * mask.w() + x);
  return idx;
}

// F: keep only the rows whose mask bit is set.
template <typename T>
FeatureMatrix<T> select(const FeatureMatrix<T>& m, const SaliencyMask& mask) {
  SCN_CHECK(mask.h() == m.out_h && mask.w() == m.out_w, "select: mask dims ", mask.h(), "x",
            mask.w(), " != feature grid ", m.out_h, "x", m.out_w);
  const std::vector<int> idx = selected_rows(mask);
  FeatureMatrix<T> out(static_cast<int>(idx.size()), m.cols, m.out_h, m.out_w);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(m.row(idx[i]), m.row(idx[i]) + m.cols, out.row(static_cast<int>(i)));
  return out;
}

// G: inverse of select. Unselected rows are exactly zero.
template <typename T>
FeatureMatrix<T> scatter(const FeatureMatrix<T>& sel, const SaliencyMask& mask) {
  const std::vector<int> idx = selected_rows(mask);
  SCN_CHECK(sel.rows == static_cast<int>(idx.size()), "scatter: row count ", sel.rows,
            " != mask popcount ", idx.size());
  FeatureMatrix<T> out(mask.h() * mask.w(), sel.cols, mask.h(), mask.w());
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(sel.row(static_cast<int>(i)), sel.row(static_cast<int>(i)) + sel.cols,
              out.row(idx[i]));
  return out;
}

// Sparse conv: unfold, drop masked-out rows, multiply, scatter back with
// zero fill. Selected outputs are bit-identical to conv2d_dense because both
// run conv_row_product on the same unfolded rows. Bias is added only at
// selected locations; masked-out cells stay exactly 0.
template <typename T>
Tensor<T> masked_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        const SaliencyMask& mask, const ConvParams& p,
                        WorkMeter* meter = nullptr) {
  SCN_CHECK(w.c() == x.c(), "masked_conv2d: weight in_channels mismatch");
  SCN_CHECK(w.h() == p.kh && w.w() == p.kw, "masked_conv2d: weight kernel dims disagree");
  const bool with_bias = !b.empty();
  if (with_bias) SCN_CHECK(b.numel() == w.n(), "masked_conv2d: bias size mismatch");
  auto [oh, ow] = conv_out_dims(x.h(), x.w(), p);
  SCN_CHECK(mask.h() == oh && mask.w() == ow, "masked_conv2d: mask dims ", mask.h(), "x",
            mask.w(), " != output grid ", oh, "x", ow);
  const int oc = w.n();
  const int k = x.c() * p.kh * p.kw;
  const std::vector<T> wt = transpose_weights(w);
  const std::vector<int> idx = selected_rows(mask);
  Tensor<T> y(x.n(), oc, oh, ow);
  FeatureMatrix<T> out_rows(oh * ow, oc, oh, ow);  // zero rows stay zero
  for (int in = 0; in < x.n(); ++in) {
    FeatureMatrix<T> cols = im2col(x, in, p);
    std::fill(out_rows.data.begin(), out_rows.data.end(), T(0));
    for (int r : idx)
      conv_row_product(cols.row(r), wt, k, oc, with_bias ? b.data() : nullptr, out_rows.row(r));
    col2im(out_rows, in, y);
  }
  if (meter) {
    meter->row_products += static_cast<long long>(idx.size()) * x.n();
    meter->macs += static_cast<long long>(idx.size()) * x.n() * k * oc;
  }
  return y;
}

// Gradients of masked_conv2d. Identical to the dense conv gradients computed
// with the output gradient zeroed at masked-out locations: those rows never
// contributed forward, so nothing flows back through them.
template <typename T>
void masked_conv2d_bwd(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& w,
                       const SaliencyMask& mask, const ConvParams& p, Tensor<T>* gx,
                       Tensor<T>* gw, Tensor<T>* gb) {
  auto [oh, ow] = conv_out_dims(x.h(), x.w(), p);
  SCN_CHECK(gy.h() == oh && gy.w() == ow && gy.c() == w.n(), "masked_conv2d_bwd: grad shape");
  const int k = x.c() * p.kh * p.kw;
  const int oc = w.n();
  const std::vector<int> idx = selected_rows(mask);
  const T* wdata = w.data();

  FeatureMatrix<T> gcol(oh * ow, k, oh, ow);
  for (int in = 0; in < gy.n(); ++in) {
    FeatureMatrix<T> cols;
    if (gw) cols = im2col(x, in, p);
    if (gx) std::fill(gcol.data.begin(), gcol.data.end(), T(0));
    for (int r : idx) {
      const int oy = r / ow, ox = r % ow;
      for (int o = 0; o < oc; ++o) {
        const T g = gy.at(in, o, oy, ox);
        if (g == T(0)) continue;
        const T* wrow = wdata + static_cast<size_t>(o) * k;
        if (gx) {
          T* grow = gcol.row(r);
          for (int i = 0; i < k; ++i) grow[i] += g * wrow[i];
        }
        if (gw) {
          const T* row = cols.row(r);
          T* gwrow = gw->data() + static_cast<size_t>(o) * k;
          for (int i = 0; i < k; ++i) gwrow[i] += g * row[i];
        }
        if (gb) gb->data()[o] += g;
      }
    }
    if (gx) col2im_accum(gcol, in, p, *gx);
  }
}

// Soft guidance for the indirect strategy: out(c, y, x) = x(c, y, x) * p(y, x).
template <typename T>
Tensor<T> soft_mask_apply(const Tensor<T>& x, const ProbMap<T>& p) {
  SCN_CHECK(p.h == x.h() && p.w == x.w(), "soft_mask_apply: map dims ", p.h, "x", p.w,
            " != feature dims ", x.h(), "x", x.w());
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  const size_t hw = static_cast<size_t>(x.h()) * x.w();
  for (int in = 0; in < x.n(); ++in)
    for (int c = 0; c < x.c(); ++c) {
      const T* sp = x.plane(in, c);
      T* dp = y.plane(in, c);
      for (size_t i = 0; i < hw; ++i) dp[i] = sp[i] * p.v[i];
    }
  return y;
}

// d/dx = gy * p. d/dp accumulates across channels (and batch items) since the
// map is broadcast over them. gp may be null when the gradient to the map is
// deliberately cut (gradient gating).
template <typename T>
void soft_mask_apply_bwd(const Tensor<T>& gy, const Tensor<T>& x, const ProbMap<T>& p,
                         Tensor<T>& gx, ProbMap<T>* gp) {
  SCN_CHECK(gy.same_shape(x) && gx.same_shape(x), "soft_mask_apply_bwd: shape mismatch");
  const size_t hw = static_cast<size_t>(x.h()) * x.w();
  for (int in = 0; in < x.n(); ++in)
    for (int c = 0; c < x.c(); ++c) {
      const T* gyp = gy.plane(in, c);
      const T* xp = x.plane(in, c);
      T* gxp = gx.plane(in, c);
      for (size_t i = 0; i < hw; ++i) {
        gxp[i] += gyp[i] * p.v[i];
        if (gp) gp->v[i] += gyp[i] * xp[i];
      }
    }
}

}  // namespace scn
