#pragma once
// Config-driven detector assembly: a plain conv/pool trunk, the mask branch
// attached at a chosen depth, a mask pyramid feeding the guided layers, and
// per-layer detection heads. The graph owns all parameters; forward returns
// everything backward needs, so graphs stay immutable during inference.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scn/detect.hpp"
#include "scn/loss.hpp"
#include "scn/mask.hpp"
#include "scn/masked_conv.hpp"
#include "scn/params.hpp"
#include "scn/selective.hpp"
#include "scn/tensor.hpp"

namespace scn {

enum class LayerKind { Conv, MaxPool };

struct LayerDesc {
  LayerKind kind = LayerKind::Conv;
  std::string name;
  // conv
  int out_channels = 0;
  // Explicit input width for cost sheets whose connectivity is not a plain
  // chain (concatenations); 0 inherits the previous layer's output width.
  int in_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int dilation = 1;
  bool relu = true;
  // pool (stride and pad are shared with the conv fields)
  int window = 2;
  bool ceil_mode = false;
};

inline LayerDesc conv_layer(std::string name, int out_c, int k = 3, int s = 1, int p = 1,
                            int d = 1, bool relu = true) {
  LayerDesc l;
  l.kind = LayerKind::Conv;
  l.name = std::move(name);
  l.out_channels = out_c;
  l.kernel = k;
  l.stride = s;
  l.pad = p;
  l.dilation = d;
  l.relu = relu;
  return l;
}

inline LayerDesc pool_layer(std::string name, int window = 2, int s = 2, int p = 0,
                            bool ceil_mode = false) {
  LayerDesc l;
  l.kind = LayerKind::MaxPool;
  l.name = std::move(name);
  l.window = window;
  l.stride = s;
  l.pad = p;
  l.ceil_mode = ceil_mode;
  return l;
}

enum class Supervision { Direct, Indirect };
enum class PyramidMode { StrideConv, MaxPool };

// Baseline ignores the mask branch entirely; Inference and TrainDirect run
// hard binarized masks; TrainIndirect multiplies features by the soft map.
enum class RunMode { Baseline, Inference, TrainDirect, TrainIndirect };

struct NetworkSpec {
  int in_channels = 3;
  int in_h = 64;
  int in_w = 64;
  int num_classes = 1;  // foreground classes; heads predict num_classes + 1
  std::vector<LayerDesc> layers;
  std::string attach_point;                // empty: plain baseline net
  std::vector<std::string> guided_layers;  // conv layers running sparse
  std::vector<HeadSpec> heads;             // HeadSpec::name is the trunk layer read
  SelectiveModuleConfig selective;
  Supervision supervision = Supervision::Direct;
  PyramidMode pyramid_mode = PyramidMode::StrideConv;
  bool pyramid_trainable = false;
  // Indirect-mode gradient gate: mask gradients reach the mask branch only
  // through these guided layers. Unset means "last guided layer"; an empty
  // list severs the path completely.
  std::optional<std::vector<std::string>> gate_layers;
};

template <typename T>
struct GraphTape {
  std::vector<Tensor<T>> act;               // per-layer output, post relu/mask
  std::vector<Tensor<T>> pre_mask;          // guided layers, soft mode: pre-mask relu output
  std::vector<std::vector<int>> pool_argmax;
  SelectiveTape<T> module_tape;
  std::vector<ProbDownsampleTape<T>> level_tapes;  // soft pyramid, live levels
};

template <typename T>
struct ForwardOut {
  RunMode mode = RunMode::Baseline;
  ProbMap<T> prob;                        // empty in Baseline
  SaliencyMask base_mask;                 // hard modes
  std::vector<SaliencyMask> hard_levels;  // per pyramid level, hard modes
  std::vector<ProbMap<T>> soft_levels;    // per pyramid level, soft mode
  std::vector<ProbMap<T>> frozen_levels;  // pyramid of the frozen map, if one was given
  std::vector<HeadOutput<T>> heads;
  WorkMeter meter;                   // all sparse convolutions merged
  std::vector<WorkMeter> guided_meters;  // parallel to guided layer order
  GraphTape<T> tape;
};

template <typename T>
class Graph {
 public:
  struct Shape {
    int c, h, w;
  };

  explicit Graph(NetworkSpec s) : spec_(std::move(s)) { build(); }

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Shape>& shapes() const { return shapes_; }
  int attach_index() const { return attach_idx_; }
  bool guided() const { return !guided_idx_.empty(); }
  const std::vector<int>& guided_indices() const { return guided_idx_; }
  int pyramid_factor(int layer_idx) const { return levels_[layer_level_[layer_idx]].f; }
  const std::vector<std::vector<Anchor>>& anchors() const { return anchors_; }
  long long total_anchors() const { return total_anchors_; }

  std::vector<std::array<int, 2>> head_grids() const {
    std::vector<std::array<int, 2>> g;
    for (const HeadParams& h : heads_)
      g.push_back({shapes_[h.layer_idx].h, shapes_[h.layer_idx].w});
    return g;
  }

  // Trunk stride at the attach point; the ground-truth mask grid lives here.
  int attach_stride() const {
    SCN_CHECK(attach_idx_ >= 0, "attach_stride: spec has no attach point");
    const Shape& s = shapes_[attach_idx_];
    SCN_CHECK(spec_.in_h % s.h == 0 && spec_.in_w % s.w == 0 &&
                  spec_.in_h / s.h == spec_.in_w / s.w,
              "attach_stride: attach grid ", s.h, "x", s.w, " is not an integer stride of ",
              spec_.in_h, "x", spec_.in_w);
    return spec_.in_h / s.h;
  }

  SaliencyMask gt_base_mask(const std::vector<BoundingBox>& boxes) const {
    SaliencyMask m = gt_mask_from_boxes(boxes, spec_.in_h, spec_.in_w, attach_stride());
    const Shape& s = shapes_[attach_idx_];
    SCN_CHECK(m.h() == s.h && m.w() == s.w, "gt_base_mask: grid mismatch");
    return m;
  }

  void init_params(Rng& rng) {
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      if (spec_.layers[i].kind != LayerKind::Conv) continue;
      he_fill(rng, conv_w_[i]);
      conv_b_[i].v.zero();
      conv_b_[i].g.zero();
    }
    if (attach_idx_ >= 0) module_.init_params(rng);
    for (HeadParams& h : heads_) {
      he_fill(rng, h.cls_w);
      he_fill(rng, h.loc_w);
      h.cls_b.v.zero();
      h.loc_b.v.zero();
    }
    for (auto& [f, p] : pyr_w_) {
      const T u = T(1) / static_cast<T>(f * f);
      std::fill(p.v.data(), p.v.data() + p.v.numel(), u);
      p.g.zero();
    }
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      if (spec_.layers[i].kind != LayerKind::Conv) continue;
      const std::string& n = spec_.layers[i].name;
      add_param(out, n + ".w", conv_w_[i], true);
      add_param(out, n + ".b", conv_b_[i], false);
    }
    if (attach_idx_ >= 0) module_.collect_params("mask.", out);
    for (size_t hi = 0; hi < heads_.size(); ++hi) {
      const std::string n = "head." + spec_.heads[hi].layer + ".";
      add_param(out, n + "cls_w", heads_[hi].cls_w, true);
      add_param(out, n + "cls_b", heads_[hi].cls_b, false);
      add_param(out, n + "loc_w", heads_[hi].loc_w, true);
      add_param(out, n + "loc_b", heads_[hi].loc_b, false);
    }
    for (auto& [f, p] : pyr_w_)
      add_param(out, cat("pyr.f", f, ".w"), p, false);
    return out;
  }

  void zero_grads() {
    for (ParamRef<T>& p : params()) p.grad->zero();
  }

  SelectiveModule<T>& module() { return module_; }
  const SelectiveModule<T>& module() const { return module_; }

  // `frozen` substitutes a fixed probability map at every non-gated guided
  // layer (soft mode only). It turns the executed loss into the gated loss,
  // which is what the gradient gate differentiates; finite differences over
  // the mask branch then have a matching analytic counterpart.
  ForwardOut<T> forward(const Tensor<T>& image, RunMode mode,
                        const ProbMap<T>* frozen = nullptr) const {
    SCN_CHECK(image.n() == 1 && image.c() == spec_.in_channels && image.h() == spec_.in_h &&
                  image.w() == spec_.in_w,
              "forward: image shape ", image.shape_str(), " does not match spec input");
    if (mode != RunMode::Baseline)
      SCN_CHECK(attach_idx_ >= 0, "forward: mode needs an attach point in the spec");
    if (mode == RunMode::TrainIndirect)
      SCN_CHECK(spec_.supervision == Supervision::Indirect,
                "forward: indirect run on a direct-supervision spec");
    if (mode == RunMode::TrainDirect)
      SCN_CHECK(spec_.supervision == Supervision::Direct,
                "forward: direct run on an indirect-supervision spec");
    if (frozen)
      SCN_CHECK(mode == RunMode::TrainIndirect, "forward: frozen map only applies to soft mode");

    const bool hard = mode == RunMode::Inference || mode == RunMode::TrainDirect;
    const bool soft = mode == RunMode::TrainIndirect;

    ForwardOut<T> fo;
    fo.mode = mode;
    const size_t n_layers = spec_.layers.size();
    fo.tape.act.resize(n_layers);
    fo.tape.pre_mask.resize(n_layers);
    fo.tape.pool_argmax.resize(n_layers);

    const Tensor<T>* x = &image;
    for (size_t i = 0; i < n_layers; ++i) {
      const LayerDesc& d = spec_.layers[i];
      if (d.kind == LayerKind::MaxPool) {
        fo.tape.act[i] =
            maxpool2d(*x, d.window, d.stride, d.pad, d.ceil_mode, &fo.tape.pool_argmax[i]);
      } else {
        const ConvParams cp = conv_params(d);
        const bool run_sparse = hard && is_guided_[i];
        const bool run_soft = soft && is_guided_[i];
        if (run_sparse) {
          WorkMeter m;
          fo.tape.act[i] = masked_conv2d(*x, conv_w_[i].v, conv_b_[i].v,
                                         fo.hard_levels[layer_level_[i]], cp, &m);
          fo.guided_meters.push_back(m);
          fo.meter.merge(m);
          if (d.relu) relu_inplace(fo.tape.act[i]);
        } else {
          Tensor<T> y = conv2d_dense(*x, conv_w_[i].v, conv_b_[i].v, cp);
          if (d.relu) relu_inplace(y);
          if (run_soft) {
            const ProbMap<T>& p = soft_level_for_layer(fo, static_cast<int>(i));
            fo.tape.pre_mask[i] = y;
            fo.tape.act[i] = soft_mask_apply(y, p);
            fo.guided_meters.push_back(WorkMeter{});  // soft pass does dense work
          } else {
            fo.tape.act[i] = std::move(y);
          }
        }
      }
      x = &fo.tape.act[i];

      if (static_cast<int>(i) == attach_idx_ && mode != RunMode::Baseline) {
        fo.prob = module_.forward(*x, &fo.tape.module_tape);
        if (hard) {
          fo.base_mask = binarize(fo.prob, T(0.5));
          for (const Level& lv : levels_) fo.hard_levels.push_back(hard_level(fo.base_mask, lv));
        } else {
          fo.tape.level_tapes.resize(levels_.size());
          for (size_t l = 0; l < levels_.size(); ++l)
            fo.soft_levels.push_back(soft_level(fo.prob, levels_[l], &fo.tape.level_tapes[l]));
          if (frozen) {
            SCN_CHECK(frozen->h == fo.prob.h && frozen->w == fo.prob.w,
                      "forward: frozen map grid mismatch");
            for (const Level& lv : levels_) fo.frozen_levels.push_back(soft_level(*frozen, lv, nullptr));
          }
        }
      }
    }

    for (size_t hi = 0; hi < heads_.size(); ++hi) {
      const HeadParams& h = heads_[hi];
      const Tensor<T>& hin = fo.tape.act[h.layer_idx];
      const ConvParams& hp = h.conv;
      HeadOutput<T> out;
      if (hard && guided()) {
        const SaliencyMask& m = fo.hard_levels[h.level_idx];
        WorkMeter wm;
        out.cls = masked_conv2d(hin, h.cls_w.v, h.cls_b.v, m, hp, &wm);
        out.loc = masked_conv2d(hin, h.loc_w.v, h.loc_b.v, m, hp, &wm);
        fo.meter.merge(wm);
      } else {
        out.cls = conv2d_dense(hin, h.cls_w.v, h.cls_b.v, hp);
        out.loc = conv2d_dense(hin, h.loc_w.v, h.loc_b.v, hp);
      }
      fo.heads.push_back(std::move(out));
    }
    return fo;
  }

  // Per-head masks for decode and anchor matching: hard pyramid levels when
  // the run produced them, otherwise no suppression.
  std::vector<const SaliencyMask*> head_masks(const ForwardOut<T>& fo) const {
    std::vector<const SaliencyMask*> ms(heads_.size(), nullptr);
    if (!fo.hard_levels.empty() && guided())
      for (size_t hi = 0; hi < heads_.size(); ++hi)
        ms[hi] = &fo.hard_levels[heads_[hi].level_idx];
    return ms;
  }

  std::vector<Detection> detections(const ForwardOut<T>& fo, float score_thresh = 0.3f,
                                    float iou_thresh = 0.45f) const {
    return decode_detections(fo.heads, anchors_, head_masks(fo), spec_.num_classes, score_thresh,
                             iou_thresh, spec_.in_w, spec_.in_h);
  }

  MatchResult match(const ForwardOut<T>& fo, const std::vector<BoundingBox>& gts) const {
    return match_anchors(anchors_, head_masks(fo), head_grids(), gts);
  }

  // Head tensors flattened to the global anchor order the losses expect:
  // heads in spec order, cells row-major, anchors innermost.
  void flatten_heads(const std::vector<HeadOutput<T>>& hs, std::vector<T>& logits,
                     std::vector<T>& loc) const {
    const int cp1 = spec_.num_classes + 1;
    logits.assign(static_cast<size_t>(total_anchors_) * cp1, T(0));
    loc.assign(static_cast<size_t>(total_anchors_) * 4, T(0));
    long long base = 0;
    for (size_t hi = 0; hi < heads_.size(); ++hi) {
      const Tensor<T>& cls = hs[hi].cls;
      const Tensor<T>& lc = hs[hi].loc;
      const int na = spec_.heads[hi].num_anchors();
      for (int y = 0; y < cls.h(); ++y)
        for (int x = 0; x < cls.w(); ++x)
          for (int a = 0; a < na; ++a) {
            const long long row = base + (static_cast<long long>(y) * cls.w() + x) * na + a;
            for (int k = 0; k < cp1; ++k)
              logits[static_cast<size_t>(row) * cp1 + k] = cls.at(0, a * cp1 + k, y, x);
            for (int k = 0; k < 4; ++k)
              loc[static_cast<size_t>(row) * 4 + k] = lc.at(0, a * 4 + k, y, x);
          }
      base += static_cast<long long>(cls.h()) * cls.w() * na;
    }
  }

  std::vector<HeadOutput<T>> scatter_head_grads(const std::vector<T>& glogits,
                                                const std::vector<T>& gloc) const {
    const int cp1 = spec_.num_classes + 1;
    std::vector<HeadOutput<T>> out;
    long long base = 0;
    for (size_t hi = 0; hi < heads_.size(); ++hi) {
      const Shape& s = shapes_[heads_[hi].layer_idx];
      const int na = spec_.heads[hi].num_anchors();
      HeadOutput<T> g;
      g.cls.resize(1, na * cp1, s.h, s.w);
      g.loc.resize(1, na * 4, s.h, s.w);
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          for (int a = 0; a < na; ++a) {
            const long long row = base + (static_cast<long long>(y) * s.w + x) * na + a;
            for (int k = 0; k < cp1; ++k)
              g.cls.at(0, a * cp1 + k, y, x) = glogits[static_cast<size_t>(row) * cp1 + k];
            for (int k = 0; k < 4; ++k)
              g.loc.at(0, a * 4 + k, y, x) = gloc[static_cast<size_t>(row) * 4 + k];
          }
      base += static_cast<long long>(s.h) * s.w * na;
      out.push_back(std::move(g));
    }
    return out;
  }

  // Accumulates parameter gradients for one image. `ghead` holds the loss
  // gradients w.r.t. raw head outputs; `gprob_direct` is the mask-loss
  // gradient w.r.t. the probability map (direct supervision only).
  void backward(const Tensor<T>& image, const ForwardOut<T>& fo,
                const std::vector<HeadOutput<T>>& ghead, const ProbMap<T>* gprob_direct) {
    SCN_CHECK(fo.mode != RunMode::Baseline || gprob_direct == nullptr,
              "backward: baseline run has no mask branch");
    const bool hard = fo.mode == RunMode::Inference || fo.mode == RunMode::TrainDirect;
    const bool soft = fo.mode == RunMode::TrainIndirect;
    const size_t n_layers = spec_.layers.size();

    std::vector<Tensor<T>> gact(n_layers);
    for (size_t i = 0; i < n_layers; ++i) {
      const Shape& s = shapes_[i];
      gact[i].resize(1, s.c, s.h, s.w);
    }

    // head gradients enter at their trunk layer
    SCN_CHECK(ghead.size() == heads_.size(), "backward: head gradient count mismatch");
    for (size_t hi = 0; hi < heads_.size(); ++hi) {
      HeadParams& h = heads_[hi];
      const ConvParams& hp = h.conv;
      const Tensor<T>& hin = fo.tape.act[h.layer_idx];
      if (hard && guided()) {
        const SaliencyMask& m = fo.hard_levels[h.level_idx];
        masked_conv2d_bwd(ghead[hi].cls, hin, h.cls_w.v, m, hp, &gact[h.layer_idx], &h.cls_w.g,
                          &h.cls_b.g);
        masked_conv2d_bwd(ghead[hi].loc, hin, h.loc_w.v, m, hp, &gact[h.layer_idx], &h.loc_w.g,
                          &h.loc_b.g);
      } else {
        gact[h.layer_idx].add_scaled(
            conv2d_bwd_data(ghead[hi].cls, h.cls_w.v, hp, hin.c(), hin.h(), hin.w()), T(1));
        gact[h.layer_idx].add_scaled(
            conv2d_bwd_data(ghead[hi].loc, h.loc_w.v, hp, hin.c(), hin.h(), hin.w()), T(1));
        conv2d_bwd_filter(ghead[hi].cls, hin, hp, h.cls_w.g, &h.cls_b.g);
        conv2d_bwd_filter(ghead[hi].loc, hin, hp, h.loc_w.g, &h.loc_b.g);
      }
    }

    // soft-mask gradients collect per pyramid level during the sweep
    std::vector<ProbMap<T>> glevel;
    if (soft)
      for (const Level& lv : levels_) glevel.emplace_back(lv.h, lv.w);

    for (int i = static_cast<int>(n_layers) - 1; i >= 0; --i) {
      const LayerDesc& d = spec_.layers[i];

      // the mask branch consumed act[attach]; fold its gradient in before
      // differentiating the attach layer itself
      if (i == attach_idx_ && fo.mode != RunMode::Baseline) {
        ProbMap<T> gprob(fo.prob.h, fo.prob.w);
        if (gprob_direct) {
          SCN_CHECK(gprob_direct->h == gprob.h && gprob_direct->w == gprob.w,
                    "backward: mask-loss gradient grid mismatch");
          for (size_t k = 0; k < gprob.v.size(); ++k) gprob.v[k] += gprob_direct->v[k];
        }
        if (soft)
          for (size_t l = 0; l < levels_.size(); ++l)
            chain_level_grad(glevel[l], fo, static_cast<int>(l), gprob);
        gact[i].add_scaled(module_.backward(gprob, fo.tape.module_tape), T(1));
      }

      Tensor<T>& g = gact[i];
      const Tensor<T>& x_in = i == 0 ? image : fo.tape.act[i - 1];
      Tensor<T>* gx = i == 0 ? nullptr : &gact[i - 1];

      if (d.kind == LayerKind::MaxPool) {
        if (gx)
          gx->add_scaled(maxpool2d_bwd(g, fo.tape.pool_argmax[i], x_in.h(), x_in.w()), T(1));
        continue;
      }

      const ConvParams cp = conv_params(d);
      if (soft && is_guided_[i]) {
        // act = pre ⊙ p; gate the mask side unless this layer is in the gate set
        const Tensor<T>& pre = fo.tape.pre_mask[i];
        const ProbMap<T>& p = soft_level_for_layer(fo, i);
        Tensor<T> gpre(1, pre.c(), pre.h(), pre.w());
        ProbMap<T>* gp = is_gated_[i] ? &glevel[layer_level_[i]] : nullptr;
        soft_mask_apply_bwd(g, pre, p, gpre, gp);
        if (d.relu) relu_bwd_inplace(gpre, pre);
        if (gx) gx->add_scaled(conv2d_bwd_data(gpre, conv_w_[i].v, cp, x_in.c(), x_in.h(), x_in.w()),
                               T(1));
        conv2d_bwd_filter(gpre, x_in, cp, conv_w_[i].g, &conv_b_[i].g);
      } else if (hard && is_guided_[i]) {
        if (d.relu) relu_bwd_inplace(g, fo.tape.act[i]);
        masked_conv2d_bwd(g, x_in, conv_w_[i].v, fo.hard_levels[layer_level_[i]], cp, gx,
                          &conv_w_[i].g, &conv_b_[i].g);
      } else {
        if (d.relu) relu_bwd_inplace(g, fo.tape.act[i]);
        if (gx)
          gx->add_scaled(conv2d_bwd_data(g, conv_w_[i].v, cp, x_in.c(), x_in.h(), x_in.w()), T(1));
        conv2d_bwd_filter(g, x_in, cp, conv_w_[i].g, &conv_b_[i].g);
      }
    }
  }

 private:
  struct Level {
    int f;  // downsample factor from the attach grid
    int h, w;
  };
  struct HeadParams {
    int layer_idx = -1;
    int level_idx = -1;
    ConvParams conv;
    Param<T> cls_w, cls_b, loc_w, loc_b;
  };

  static ConvParams conv_params(const LayerDesc& d) {
    return ConvParams::square(d.kernel, d.stride, d.pad, d.dilation);
  }

  void he_fill(Rng& rng, Param<T>& p) {
    const long long fan_in = p.v.numel() / p.v.n();
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (long long k = 0; k < p.v.numel(); ++k)
      p.v.data()[k] = static_cast<T>(rng.normal(0.0, sd));
    p.g.zero();
  }

  int layer_index(const std::string& name) const {
    for (size_t i = 0; i < spec_.layers.size(); ++i)
      if (spec_.layers[i].name == name) return static_cast<int>(i);
    fail("graph: unknown layer '", name, "'");
  }

  int level_for(int layer_idx) {
    const Shape& a = shapes_[attach_idx_];
    const Shape& s = shapes_[layer_idx];
    SCN_CHECK(s.h > 0 && s.w > 0 && a.h % s.h == 0 && a.w % s.w == 0 &&
                  a.h / s.h == a.w / s.w,
              "graph: layer '", spec_.layers[layer_idx].name, "' grid ", s.h, "x", s.w,
              " has no pyramid level under the ", a.h, "x", a.w, " attach grid");
    const int f = a.h / s.h;
    for (size_t l = 0; l < levels_.size(); ++l)
      if (levels_[l].f == f) return static_cast<int>(l);
    levels_.push_back(Level{f, s.h, s.w});
    return static_cast<int>(levels_.size()) - 1;
  }

  SaliencyMask hard_level(const SaliencyMask& base, const Level& lv) const {
    if (lv.f == 1) return base;
    if (spec_.pyramid_mode == PyramidMode::MaxPool) return downsample_maxpool(base, lv.f);
    return downsample_stride_conv(base, lv.f);
  }

  ProbMap<T> soft_level(const ProbMap<T>& p, const Level& lv, ProbDownsampleTape<T>* tape) const {
    return prob_downsample_stride(p, lv.f, level_weights(lv.f), tape);
  }

  std::vector<T> level_weights(int f) const {
    auto it = pyr_w_.find(f);
    if (it == pyr_w_.end()) return {};
    const Tensor<T>& w = it->second.v;
    return std::vector<T>(w.data(), w.data() + w.numel());
  }

  void chain_level_grad(const ProbMap<T>& gl, const ForwardOut<T>& fo, int l, ProbMap<T>& gprob) {
    bool any = false;
    for (const T& v : gl.v)
      if (v != T(0)) {
        any = true;
        break;
      }
    if (!any) return;
    const int f = levels_[l].f;
    auto it = pyr_w_.find(f);
    std::vector<T> gw;
    if (it != pyr_w_.end()) gw.assign(static_cast<size_t>(f) * f, T(0));
    prob_downsample_stride_bwd(gl, fo.prob, f, level_weights(f), fo.tape.level_tapes[l], gprob,
                               it != pyr_w_.end() ? &gw : nullptr);
    if (it != pyr_w_.end())
      for (int k = 0; k < f * f; ++k) it->second.g.data()[k] += gw[k];
  }

  const ProbMap<T>& soft_level_for_layer(const ForwardOut<T>& fo, int i) const {
    const int l = layer_level_[i];
    if (!fo.frozen_levels.empty() && !is_gated_[i]) return fo.frozen_levels[l];
    return fo.soft_levels[l];
  }

  void build() {
    SCN_CHECK(!spec_.layers.empty(), "graph: spec has no layers");
    SCN_CHECK(spec_.num_classes >= 1, "graph: need at least one foreground class");
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerDesc& d = spec_.layers[i];
      SCN_CHECK(!d.name.empty(), "graph: layer ", i, " has no name");
      for (size_t j = 0; j < i; ++j)
        SCN_CHECK(spec_.layers[j].name != d.name, "graph: duplicate layer name '", d.name, "'");
      if (d.kind == LayerKind::Conv)
        SCN_CHECK(d.out_channels > 0, "graph: layer '", d.name, "' needs out_channels");
    }

    // shape propagation
    int c = spec_.in_channels, h = spec_.in_h, w = spec_.in_w;
    for (const LayerDesc& d : spec_.layers) {
      if (d.kind == LayerKind::Conv) {
        auto [oh, ow] = conv_out_dims(h, w, conv_params(d));
        c = d.out_channels;
        h = oh;
        w = ow;
      } else {
        h = pool_out_dim(h, d.window, d.stride, d.pad, d.ceil_mode);
        w = pool_out_dim(w, d.window, d.stride, d.pad, d.ceil_mode);
      }
      shapes_.push_back(Shape{c, h, w});
    }

    attach_idx_ = spec_.attach_point.empty() ? -1 : layer_index(spec_.attach_point);
    SCN_CHECK(spec_.guided_layers.empty() || attach_idx_ >= 0,
              "graph: guided layers need an attach point");

    is_guided_.assign(spec_.layers.size(), 0);
    is_gated_.assign(spec_.layers.size(), 0);
    layer_level_.assign(spec_.layers.size(), -1);

    for (const std::string& n : spec_.guided_layers) {
      const int i = layer_index(n);
      SCN_CHECK(spec_.layers[i].kind == LayerKind::Conv, "graph: guided layer '", n,
                "' is not a conv layer");
      SCN_CHECK(i > attach_idx_, "graph: guided layer '", n, "' does not come after the attach point");
      SCN_CHECK(!is_guided_[i], "graph: guided layer '", n, "' listed twice");
      is_guided_[i] = 1;
      guided_idx_.push_back(i);
    }
    std::sort(guided_idx_.begin(), guided_idx_.end());

    // gradient gate; unset resolves to the guided layer nearest the heads
    if (spec_.gate_layers.has_value()) {
      for (const std::string& n : *spec_.gate_layers) {
        const int i = layer_index(n);
        SCN_CHECK(is_guided_[i], "graph: gate layer '", n, "' is not a guided layer");
        is_gated_[i] = 1;
      }
    } else if (!guided_idx_.empty()) {
      is_gated_[guided_idx_.back()] = 1;
    }

    // parameters and pyramid levels
    conv_w_.resize(spec_.layers.size());
    conv_b_.resize(spec_.layers.size());
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerDesc& d = spec_.layers[i];
      if (d.kind != LayerKind::Conv) continue;
      int in_c = i == 0 ? spec_.in_channels : shapes_[i - 1].c;
      if (d.in_channels > 0) in_c = d.in_channels;
      conv_w_[i].build(d.out_channels, in_c, d.kernel, d.kernel);
      conv_b_[i].build(d.out_channels, 1, 1, 1);
    }

    if (attach_idx_ >= 0) {
      const Shape& a = shapes_[attach_idx_];
      SCN_CHECK(a.h % 2 == 0 && a.w % 2 == 0, "graph: attach grid ", a.h, "x", a.w,
                " must be even for the mask branch");
      module_.build(a.c, spec_.selective);
      for (int i : guided_idx_) layer_level_[i] = level_for(i);
    }

    SCN_CHECK(!spec_.heads.empty(), "graph: spec has no detection heads");
    const int cp1 = spec_.num_classes + 1;
    for (const HeadSpec& hs : spec_.heads) {
      HeadParams hp;
      hp.layer_idx = layer_index(hs.layer);
      for (const HeadParams& prev : heads_)
        SCN_CHECK(prev.layer_idx != hp.layer_idx, "graph: two heads on layer '", hs.layer, "'");
      if (!guided_idx_.empty()) {
        SCN_CHECK(hp.layer_idx >= attach_idx_, "graph: head on '", hs.layer,
                  "' precedes the attach point");
        hp.level_idx = level_for(hp.layer_idx);
        layer_level_[hp.layer_idx] = hp.level_idx;
      }
      const Shape& s = shapes_[hp.layer_idx];
      const int na = hs.num_anchors();
      SCN_CHECK(na > 0, "graph: head on '", hs.layer, "' declares no anchors");
      SCN_CHECK(hs.kernel >= 1 && hs.kernel % 2 == 1, "graph: head kernel must be odd");
      hp.conv = ConvParams::square(hs.kernel, 1, hs.kernel / 2);
      hp.cls_w.build(na * cp1, s.c, hs.kernel, hs.kernel);
      hp.cls_b.build(na * cp1, 1, 1, 1);
      hp.loc_w.build(na * 4, s.c, hs.kernel, hs.kernel);
      hp.loc_b.build(na * 4, 1, 1, 1);
      anchors_.push_back(make_anchors(hs, s.h, s.w, spec_.in_h, spec_.in_w));
      total_anchors_ += static_cast<long long>(anchors_.back().size());
      heads_.push_back(std::move(hp));
    }

    if (spec_.pyramid_trainable && spec_.supervision == Supervision::Indirect)
      for (const Level& lv : levels_)
        if (lv.f > 1) {
          Param<T>& p = pyr_w_[lv.f];
          p.build(1, 1, lv.f, lv.f);
          const T u = T(1) / static_cast<T>(lv.f * lv.f);
          std::fill(p.v.data(), p.v.data() + p.v.numel(), u);
        }
  }

  NetworkSpec spec_;
  std::vector<Shape> shapes_;
  int attach_idx_ = -1;
  std::vector<int> guided_idx_;
  std::vector<uint8_t> is_guided_, is_gated_;
  std::vector<int> layer_level_;
  std::vector<Level> levels_;
  std::vector<Param<T>> conv_w_, conv_b_;
  SelectiveModule<T> module_;
  std::vector<HeadParams> heads_;
  std::vector<std::vector<Anchor>> anchors_;
  long long total_anchors_ = 0;
  std::map<int, Param<T>> pyr_w_;
};

}  // namespace scn
