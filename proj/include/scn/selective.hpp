#pragma once

#include <limits>
#include <vector>

#include "scn/common.hpp"
#include "scn/mask.hpp"
#include "scn/params.hpp"
#include "scn/tensor.hpp"

namespace scn {

// Architecture switches for the mask-predicting module. Defaults are the
// full configuration; each flag can be ablated independently.
struct SelectiveModuleConfig {
  int channels = 8;                     // internal width
  bool use_dilated = true;              // context stage: 3x3 dilated conv
  int dilation_rate = 2;
  bool use_nonlocal = true;             // context stage: self-attention block
  bool use_deconv_upsample = true;      // false: bilinear x2 instead
  bool use_skip = true;                 // decoder adds projected encoder input
  bool use_depthwise_separable = false; // 3x3 convs become depthwise + 1x1
};

// ---------------------------------------------------------------------------
// Non-local block (embedded Gaussian form, residual, no biases):
//   S = theta(x)^T phi(x),  A = row_softmax(S),  y = Wz (g(x) A^T) + x
// Wz starts at zero so the block begins as identity.
// ---------------------------------------------------------------------------

template <typename T>
struct NonLocalParams {
  Param<T> wt, wf, wg, wz;  // theta, phi, g: (ce, c, 1, 1); wz: (c, ce, 1, 1)
  int c = 0, ce = 0;

  void build(int channels) {
    c = channels;
    ce = std::max(1, channels / 2);
    wt.build(ce, c, 1, 1);
    wf.build(ce, c, 1, 1);
    wg.build(ce, c, 1, 1);
    wz.build(c, ce, 1, 1);
  }

  void init(Rng& rng) {
    const T s = static_cast<T>(std::sqrt(2.0 / c));
    for (long long i = 0; i < wt.v.numel(); ++i) wt.v.data()[i] = static_cast<T>(rng.normal(0, s));
    for (long long i = 0; i < wf.v.numel(); ++i) wf.v.data()[i] = static_cast<T>(rng.normal(0, s));
    for (long long i = 0; i < wg.v.numel(); ++i) wg.v.data()[i] = static_cast<T>(rng.normal(0, s));
    wz.v.zero();  // residual path starts as identity
  }
};

template <typename T>
struct NonLocalTape {
  // flattened (rows x cols) matrices saved from the forward pass
  std::vector<T> theta, phi, g;  // (ce, hw)
  std::vector<T> a;              // (hw, hw) attention rows
  std::vector<T> y;              // (ce, hw)
  int hw = 0;
};

namespace detail {

// out(ce, hw) = W(ce, c) * X(c, hw); W given as a 1x1 conv weight tensor.
template <typename T>
void project_1x1(const Tensor<T>& w, const T* x, int c, int hw, std::vector<T>& out) {
  const int ce = w.n();
  out.assign(static_cast<size_t>(ce) * hw, T(0));
  for (int e = 0; e < ce; ++e) {
    T* orow = out.data() + static_cast<size_t>(e) * hw;
    for (int ic = 0; ic < c; ++ic) {
      const T wv = w.data()[static_cast<size_t>(e) * c + ic];
      if (wv == T(0)) continue;
      const T* xrow = x + static_cast<size_t>(ic) * hw;
      for (int i = 0; i < hw; ++i) orow[i] += wv * xrow[i];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> nonlocal_forward(const Tensor<T>& x, const NonLocalParams<T>& p,
                           NonLocalTape<T>* tape) {
  SCN_CHECK(x.n() == 1, "nonlocal: single image only");
  SCN_CHECK(x.c() == p.c, "nonlocal: channel mismatch");
  const int hw = x.h() * x.w();
  const int c = p.c, ce = p.ce;

  NonLocalTape<T> local;
  NonLocalTape<T>& tp = tape ? *tape : local;
  tp.hw = hw;
  detail::project_1x1(p.wt.v, x.data(), c, hw, tp.theta);
  detail::project_1x1(p.wf.v, x.data(), c, hw, tp.phi);
  detail::project_1x1(p.wg.v, x.data(), c, hw, tp.g);

  // A[i][j] = softmax_j(theta_i . phi_j)
  tp.a.assign(static_cast<size_t>(hw) * hw, T(0));
  std::vector<T> srow(hw);
  for (int i = 0; i < hw; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < hw; ++j) {
      T s = T(0);
      for (int e = 0; e < ce; ++e)
        s += tp.theta[static_cast<size_t>(e) * hw + i] * tp.phi[static_cast<size_t>(e) * hw + j];
      srow[j] = s;
      if (s > mx) mx = s;
    }
    T denom = T(0);
    T* arow = tp.a.data() + static_cast<size_t>(i) * hw;
    for (int j = 0; j < hw; ++j) {
      arow[j] = std::exp(srow[j] - mx);
      denom += arow[j];
    }
    for (int j = 0; j < hw; ++j) arow[j] /= denom;
  }

  // y[:, i] = sum_j A[i][j] g[:, j]
  tp.y.assign(static_cast<size_t>(ce) * hw, T(0));
  for (int e = 0; e < ce; ++e) {
    const T* grow = tp.g.data() + static_cast<size_t>(e) * hw;
    T* yrow = tp.y.data() + static_cast<size_t>(e) * hw;
    for (int i = 0; i < hw; ++i) {
      const T* arow = tp.a.data() + static_cast<size_t>(i) * hw;
      T s = T(0);
      for (int j = 0; j < hw; ++j) s += arow[j] * grow[j];
      yrow[i] = s;
    }
  }

  // out = x + Wz y
  Tensor<T> out = x;
  for (int ch = 0; ch < c; ++ch) {
    T* opl = out.plane(0, ch);
    for (int e = 0; e < ce; ++e) {
      const T wv = p.wz.v.data()[static_cast<size_t>(ch) * ce + e];
      if (wv == T(0)) continue;
      const T* yrow = tp.y.data() + static_cast<size_t>(e) * hw;
      for (int i = 0; i < hw; ++i) opl[i] += wv * yrow[i];
    }
  }
  return out;
}

// Accumulates parameter grads into p's Param::g members; returns dx.
template <typename T>
Tensor<T> nonlocal_backward(const Tensor<T>& gy, const Tensor<T>& x, NonLocalParams<T>& p,
                            const NonLocalTape<T>& tp) {
  const int hw = tp.hw, c = p.c, ce = p.ce;
  Tensor<T> gx = gy;  // residual path

  // dWz[ch][e] = sum_i gy[ch][i] y[e][i];  dY = Wz^T gy
  std::vector<T> dy(static_cast<size_t>(ce) * hw, T(0));
  for (int ch = 0; ch < c; ++ch) {
    const T* gpl = gy.plane(0, ch);
    for (int e = 0; e < ce; ++e) {
      const T* yrow = tp.y.data() + static_cast<size_t>(e) * hw;
      T s = T(0);
      const T wv = p.wz.v.data()[static_cast<size_t>(ch) * ce + e];
      T* dyrow = dy.data() + static_cast<size_t>(e) * hw;
      for (int i = 0; i < hw; ++i) {
        s += gpl[i] * yrow[i];
        dyrow[i] += wv * gpl[i];
      }
      p.wz.g.data()[static_cast<size_t>(ch) * ce + e] += s;
    }
  }

  // dG[:, j] = sum_i dY[:, i] A[i][j];  dA[i][j] = dY[:, i] . G[:, j]
  std::vector<T> dg(static_cast<size_t>(ce) * hw, T(0));
  std::vector<T> da(static_cast<size_t>(hw) * hw, T(0));
  for (int i = 0; i < hw; ++i) {
    const T* arow = tp.a.data() + static_cast<size_t>(i) * hw;
    T* darow = da.data() + static_cast<size_t>(i) * hw;
    for (int e = 0; e < ce; ++e) {
      const T dyv = dy[static_cast<size_t>(e) * hw + i];
      if (dyv == T(0)) continue;
      const T* grow = tp.g.data() + static_cast<size_t>(e) * hw;
      T* dgrow = dg.data() + static_cast<size_t>(e) * hw;
      for (int j = 0; j < hw; ++j) {
        dgrow[j] += dyv * arow[j];
        darow[j] += dyv * grow[j];
      }
    }
  }

  // softmax backward per row: dS = A o (dA - (dA . A))
  std::vector<T> ds(static_cast<size_t>(hw) * hw);
  for (int i = 0; i < hw; ++i) {
    const T* arow = tp.a.data() + static_cast<size_t>(i) * hw;
    const T* darow = da.data() + static_cast<size_t>(i) * hw;
    T dot = T(0);
    for (int j = 0; j < hw; ++j) dot += darow[j] * arow[j];
    T* dsrow = ds.data() + static_cast<size_t>(i) * hw;
    for (int j = 0; j < hw; ++j) dsrow[j] = arow[j] * (darow[j] - dot);
  }

  // dTheta[:, i] = sum_j dS[i][j] phi[:, j];  dPhi[:, j] = sum_i dS[i][j] theta[:, i]
  std::vector<T> dtheta(static_cast<size_t>(ce) * hw, T(0));
  std::vector<T> dphi(static_cast<size_t>(ce) * hw, T(0));
  for (int i = 0; i < hw; ++i) {
    const T* dsrow = ds.data() + static_cast<size_t>(i) * hw;
    for (int e = 0; e < ce; ++e) {
      const T* phirow = tp.phi.data() + static_cast<size_t>(e) * hw;
      const T thv = tp.theta[static_cast<size_t>(e) * hw + i];
      T acc = T(0);
      T* dphirow = dphi.data() + static_cast<size_t>(e) * hw;
      for (int j = 0; j < hw; ++j) {
        acc += dsrow[j] * phirow[j];
        dphirow[j] += dsrow[j] * thv;
      }
      dtheta[static_cast<size_t>(e) * hw + i] += acc;
    }
  }

  // projections: dW[e][ch] += dProj[e,:] . x[ch,:];  dx[ch,:] += W[e][ch] dProj[e,:]
  auto backprop_projection = [&](const std::vector<T>& dproj, Param<T>& w) {
    for (int e = 0; e < ce; ++e) {
      const T* drow = dproj.data() + static_cast<size_t>(e) * hw;
      for (int ch = 0; ch < c; ++ch) {
        const T* xpl = x.plane(0, ch);
        T* gxpl = gx.plane(0, ch);
        const T wv = w.v.data()[static_cast<size_t>(e) * c + ch];
        T s = T(0);
        for (int i = 0; i < hw; ++i) {
          s += drow[i] * xpl[i];
          gxpl[i] += wv * drow[i];
        }
        w.g.data()[static_cast<size_t>(e) * c + ch] += s;
      }
    }
  };
  backprop_projection(dtheta, p.wt);
  backprop_projection(dphi, p.wf);
  backprop_projection(dg, p.wg);
  return gx;
}

// ---------------------------------------------------------------------------
// Selective Module: a small hourglass over the attach-point features that
// emits a per-cell foreground probability map at the same resolution.
//
//   in:   3x3 conv + relu                         (trunk_ch -> mc)
//   ctx:  [3x3 dilated conv + relu]  [non-local]  (mc -> mc, optional)
//   enc:  3x3 stride-2 conv + relu                (mc -> mc, half res)
//   dec:  2x2 stride-2 deconv + relu, or bilinear x2 + relu
//   skip: + 1x1 projection of the pre-encoder features (optional)
//   out:  1x1 conv -> sigmoid
//
// The output conv starts at zero, so an untrained module emits 0.5
// everywhere and the binarized mask keeps every location.
// ---------------------------------------------------------------------------

template <typename T>
struct SelectiveTape {
  Tensor<T> x;                    // attach input
  Tensor<T> in_dw, dil_dw, enc_dw;  // depthwise intermediates (separable mode)
  Tensor<T> t0, t1, t2;           // post-relu input stage, dilated stage, context out
  NonLocalTape<T> nl;
  Tensor<T> e, u, s;              // encoder out, upsampled out, decoder sum
  ProbMap<T> prob;
};

template <typename T>
class SelectiveModule {
 public:
  SelectiveModuleConfig cfg;
  int in_ch = 0;

  // convs (dense mode)
  Param<T> in_w, in_b;
  Param<T> dil_w, dil_b;
  Param<T> enc_w, enc_b;
  // depthwise-separable replacements for the three 3x3 convs
  Param<T> in_dw_w, in_pw_w;
  Param<T> dil_dw_w, dil_pw_w;
  Param<T> enc_dw_w, enc_pw_w;
  NonLocalParams<T> nl;
  Param<T> up_w, up_b;      // deconv (mc, mc, 2, 2)
  Param<T> skip_w, skip_b;  // 1x1
  Param<T> out_w, out_b;    // 1x1 -> 1 channel

  void build(int in_channels, const SelectiveModuleConfig& c) {
    cfg = c;
    in_ch = in_channels;
    const int mc = cfg.channels;
    SCN_CHECK(mc > 0, "selective module: channels must be positive");
    if (cfg.use_depthwise_separable) {
      in_dw_w.build(in_ch, 1, 3, 3);
      in_pw_w.build(mc, in_ch, 1, 1);
      dil_dw_w.build(mc, 1, 3, 3);
      dil_pw_w.build(mc, mc, 1, 1);
      enc_dw_w.build(mc, 1, 3, 3);
      enc_pw_w.build(mc, mc, 1, 1);
    } else {
      in_w.build(mc, in_ch, 3, 3);
      dil_w.build(mc, mc, 3, 3);
      enc_w.build(mc, mc, 3, 3);
    }
    in_b.build(1, mc, 1, 1);
    dil_b.build(1, mc, 1, 1);
    enc_b.build(1, mc, 1, 1);
    if (cfg.use_nonlocal) nl.build(mc);
    if (cfg.use_deconv_upsample) {
      up_w.build(mc, mc, 2, 2);
      up_b.build(1, mc, 1, 1);
    }
    if (cfg.use_skip) {
      skip_w.build(mc, mc, 1, 1);
      skip_b.build(1, mc, 1, 1);
    }
    out_w.build(1, mc, 1, 1);
    out_b.build(1, 1, 1, 1);
  }

  void init_params(Rng& rng) {
    auto he = [&](Param<T>& p, int fan_in) {
      const T s = static_cast<T>(std::sqrt(2.0 / fan_in));
      for (long long i = 0; i < p.v.numel(); ++i) p.v.data()[i] = static_cast<T>(rng.normal(0, s));
    };
    const int mc = cfg.channels;
    if (cfg.use_depthwise_separable) {
      he(in_dw_w, 9);
      he(in_pw_w, in_ch);
      he(dil_dw_w, 9);
      he(dil_pw_w, mc);
      he(enc_dw_w, 9);
      he(enc_pw_w, mc);
    } else {
      he(in_w, in_ch * 9);
      he(dil_w, mc * 9);
      he(enc_w, mc * 9);
    }
    if (cfg.use_nonlocal) nl.init(rng);
    if (cfg.use_deconv_upsample) he(up_w, mc * 4);
    if (cfg.use_skip) he(skip_w, mc);
    // zero: prob starts at exactly 0.5, so the initial mask keeps everything
    out_w.v.zero();
    out_b.v.zero();
  }

  ProbMap<T> forward(const Tensor<T>& x, SelectiveTape<T>* tape) const {
    SCN_CHECK(x.n() == 1, "selective module: single image only");
    SCN_CHECK(x.c() == in_ch, "selective module: expected ", in_ch, " channels, got ", x.c());
    SCN_CHECK(x.h() % 2 == 0 && x.w() % 2 == 0,
              "selective module: attach resolution must be even, got ", x.h(), "x", x.w());
    SelectiveTape<T> local;
    SelectiveTape<T>& tp = tape ? *tape : local;
    tp.x = x;

    const ConvParams k3 = ConvParams::square(3, 1, 1);
    if (cfg.use_depthwise_separable) {
      tp.in_dw = depthwise_conv2d(x, in_dw_w.v, Tensor<T>(), k3);
      tp.t0 = conv2d_dense(tp.in_dw, in_pw_w.v, in_b.v, ConvParams::square(1));
    } else {
      tp.t0 = conv2d_dense(x, in_w.v, in_b.v, k3);
    }
    relu_inplace(tp.t0);

    if (cfg.use_dilated) {
      const int r = cfg.dilation_rate;
      const ConvParams kd{3, 3, 1, 1, r, r, r, r};
      if (cfg.use_depthwise_separable) {
        tp.dil_dw = depthwise_conv2d(tp.t0, dil_dw_w.v, Tensor<T>(), kd);
        tp.t1 = conv2d_dense(tp.dil_dw, dil_pw_w.v, dil_b.v, ConvParams::square(1));
      } else {
        tp.t1 = conv2d_dense(tp.t0, dil_w.v, dil_b.v, kd);
      }
      relu_inplace(tp.t1);
    } else {
      tp.t1 = tp.t0;
    }

    tp.t2 = cfg.use_nonlocal ? nonlocal_forward(tp.t1, nl, &tp.nl) : tp.t1;

    const ConvParams kenc{3, 3, 2, 2, 1, 1, 1, 1};
    if (cfg.use_depthwise_separable) {
      tp.enc_dw = depthwise_conv2d(tp.t2, enc_dw_w.v, Tensor<T>(), kenc);
      tp.e = conv2d_dense(tp.enc_dw, enc_pw_w.v, enc_b.v, ConvParams::square(1));
    } else {
      tp.e = conv2d_dense(tp.t2, enc_w.v, enc_b.v, kenc);
    }
    relu_inplace(tp.e);

    if (cfg.use_deconv_upsample) {
      tp.u = deconv2d(tp.e, up_w.v, up_b.v, ConvParams::square(2, 2));
    } else {
      tp.u = bilinear_upsample(tp.e, x.h(), x.w());
    }
    relu_inplace(tp.u);

    tp.s = tp.u;
    if (cfg.use_skip) {
      Tensor<T> proj = conv2d_dense(tp.t2, skip_w.v, skip_b.v, ConvParams::square(1));
      tp.s.add_scaled(proj, T(1));
    }

    Tensor<T> logits = conv2d_dense(tp.s, out_w.v, out_b.v, ConvParams::square(1));
    tp.prob = ProbMap<T>(x.h(), x.w());
    for (int i = 0; i < x.h() * x.w(); ++i) tp.prob.v[i] = sigmoid(logits.plane(0, 0)[i]);
    return tp.prob;
  }

  // Accumulates parameter gradients in place; returns the gradient w.r.t.
  // the attach-point features.
  Tensor<T> backward(const ProbMap<T>& gprob, const SelectiveTape<T>& tp) {
    const int h = tp.x.h(), w = tp.x.w();
    const int mc = cfg.channels;

    // sigmoid + 1x1 out conv
    Tensor<T> glogits(1, 1, h, w);
    for (int i = 0; i < h * w; ++i) {
      const T pv = tp.prob.v[i];
      glogits.plane(0, 0)[i] = gprob.v[i] * pv * (T(1) - pv);
    }
    Tensor<T> gs = conv2d_bwd_data(glogits, out_w.v, ConvParams::square(1), mc, h, w);
    conv2d_bwd_filter(glogits, tp.s, ConvParams::square(1), out_w.g, &out_b.g);

    // skip branch
    Tensor<T> gt2(1, mc, h, w);
    if (cfg.use_skip) {
      Tensor<T> gproj = gs;  // sum node copies the gradient to both branches
      gt2 = conv2d_bwd_data(gproj, skip_w.v, ConvParams::square(1), mc, h, w);
      conv2d_bwd_filter(gproj, tp.t2, ConvParams::square(1), skip_w.g, &skip_b.g);
    }

    // upsample branch
    Tensor<T> gu = gs;
    relu_bwd_inplace(gu, tp.u);
    Tensor<T> ge;
    if (cfg.use_deconv_upsample) {
      ge = deconv2d_bwd_data(gu, up_w.v, ConvParams::square(2, 2));
      deconv2d_bwd_filter(gu, tp.e, ConvParams::square(2, 2), up_w.g, &up_b.g);
    } else {
      ge = bilinear_upsample_bwd(gu, tp.e.h(), tp.e.w());
    }
    relu_bwd_inplace(ge, tp.e);

    const ConvParams kenc{3, 3, 2, 2, 1, 1, 1, 1};
    if (cfg.use_depthwise_separable) {
      Tensor<T> g_enc_dw = conv2d_bwd_data(ge, enc_pw_w.v, ConvParams::square(1), mc,
                                           tp.enc_dw.h(), tp.enc_dw.w());
      conv2d_bwd_filter(ge, tp.enc_dw, ConvParams::square(1), enc_pw_w.g, &enc_b.g);
      Tensor<T> gfrom_enc(1, mc, h, w);
      depthwise_conv2d_bwd(g_enc_dw, tp.t2, enc_dw_w.v, kenc, &gfrom_enc, &enc_dw_w.g, static_cast<Tensor<T>*>(nullptr));
      gt2.add_scaled(gfrom_enc, T(1));
    } else {
      gt2.add_scaled(conv2d_bwd_data(ge, enc_w.v, kenc, mc, h, w), T(1));
      conv2d_bwd_filter(ge, tp.t2, kenc, enc_w.g, &enc_b.g);
    }

    Tensor<T> gt1 = cfg.use_nonlocal ? nonlocal_backward(gt2, tp.t1, nl, tp.nl) : gt2;

    Tensor<T> gt0;
    if (cfg.use_dilated) {
      relu_bwd_inplace(gt1, tp.t1);
      const int r = cfg.dilation_rate;
      const ConvParams kd{3, 3, 1, 1, r, r, r, r};
      if (cfg.use_depthwise_separable) {
        Tensor<T> g_dil_dw = conv2d_bwd_data(gt1, dil_pw_w.v, ConvParams::square(1), mc,
                                             tp.dil_dw.h(), tp.dil_dw.w());
        conv2d_bwd_filter(gt1, tp.dil_dw, ConvParams::square(1), dil_pw_w.g, &dil_b.g);
        gt0.resize(1, mc, h, w);
        depthwise_conv2d_bwd(g_dil_dw, tp.t0, dil_dw_w.v, kd, &gt0, &dil_dw_w.g, static_cast<Tensor<T>*>(nullptr));
      } else {
        gt0 = conv2d_bwd_data(gt1, dil_w.v, kd, mc, h, w);
        conv2d_bwd_filter(gt1, tp.t0, kd, dil_w.g, &dil_b.g);
      }
    } else {
      gt0 = gt1;
    }

    relu_bwd_inplace(gt0, tp.t0);
    const ConvParams k3 = ConvParams::square(3, 1, 1);
    Tensor<T> gx;
    if (cfg.use_depthwise_separable) {
      Tensor<T> g_in_dw = conv2d_bwd_data(gt0, in_pw_w.v, ConvParams::square(1), in_ch,
                                          tp.in_dw.h(), tp.in_dw.w());
      conv2d_bwd_filter(gt0, tp.in_dw, ConvParams::square(1), in_pw_w.g, &in_b.g);
      gx.resize(1, in_ch, h, w);
      depthwise_conv2d_bwd(g_in_dw, tp.x, in_dw_w.v, k3, &gx, &in_dw_w.g, static_cast<Tensor<T>*>(nullptr));
    } else {
      gx = conv2d_bwd_data(gt0, in_w.v, k3, in_ch, h, w);
      conv2d_bwd_filter(gt0, tp.x, k3, in_w.g, &in_b.g);
    }
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    if (cfg.use_depthwise_separable) {
      add_param(out, prefix + "in_dw_w", in_dw_w, true);
      add_param(out, prefix + "in_pw_w", in_pw_w, true);
    } else {
      add_param(out, prefix + "in_w", in_w, true);
    }
    add_param(out, prefix + "in_b", in_b, false);
    if (cfg.use_dilated) {
      if (cfg.use_depthwise_separable) {
        add_param(out, prefix + "dil_dw_w", dil_dw_w, true);
        add_param(out, prefix + "dil_pw_w", dil_pw_w, true);
      } else {
        add_param(out, prefix + "dil_w", dil_w, true);
      }
      add_param(out, prefix + "dil_b", dil_b, false);
    }
    if (cfg.use_nonlocal) {
      add_param(out, prefix + "nl_theta_w", nl.wt, true);
      add_param(out, prefix + "nl_phi_w", nl.wf, true);
      add_param(out, prefix + "nl_g_w", nl.wg, true);
      add_param(out, prefix + "nl_z_w", nl.wz, true);
    }
    if (cfg.use_depthwise_separable) {
      add_param(out, prefix + "enc_dw_w", enc_dw_w, true);
      add_param(out, prefix + "enc_pw_w", enc_pw_w, true);
    } else {
      add_param(out, prefix + "enc_w", enc_w, true);
    }
    add_param(out, prefix + "enc_b", enc_b, false);
    if (cfg.use_deconv_upsample) {
      add_param(out, prefix + "up_w", up_w, true);
      add_param(out, prefix + "up_b", up_b, false);
    }
    if (cfg.use_skip) {
      add_param(out, prefix + "skip_w", skip_w, true);
      add_param(out, prefix + "skip_b", skip_b, false);
    }
    add_param(out, prefix + "out_w", out_w, true);
    add_param(out, prefix + "out_b", out_b, false);
  }
};

}  // namespace scn
