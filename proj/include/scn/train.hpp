#pragma once
// Training loop: plain SGD with momentum and weight decay, single writer
// over the parameters, deterministic given the seed. Direct supervision
// trains the mask branch against box-derived targets; indirect supervision
// trains it through the detection losses via the soft mask.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "scn/data.hpp"
#include "scn/flops.hpp"
#include "scn/graph.hpp"
#include "scn/loss.hpp"

namespace scn {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  // 0.1 overshoots the selective module's dilated stage into a dead relu on
  // the bundled toy config; 0.05 with a doubled mask term trains it cleanly
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda1 = 1.0;  // localisation term weight
  double lambda2 = 2.0;  // mask term weight (direct supervision only)
  uint64_t seed = 1;
  bool flip = true;  // horizontal flip augmentation
};

// One CSV row. Values are epoch means over the training set.
struct EpochStats {
  int epoch = 0;
  double total = 0, cls = 0, loc = 0, mask = 0;
  double mask_density = 0;     // binarized base-mask population / cells
  double flops_reduction = 0;  // percent, guided layers and heads only
};

inline std::string metrics_csv(const std::vector<EpochStats>& rows) {
  std::ostringstream os;
  os << "epoch,L,Lc,Ll,Lm,mask_density_mean,flops_reduction_mean\n";
  for (const EpochStats& r : rows)
    os << r.epoch << "," << r.total << "," << r.cls << "," << r.loc << "," << r.mask << ","
       << r.mask_density << "," << r.flops_reduction << "\n";
  return os.str();
}

template <typename T>
void flip_horizontal(Tensor<T>& img, std::vector<BoundingBox>& boxes) {
  const int w = img.w();
  for (int c = 0; c < img.c(); ++c)
    for (int y = 0; y < img.h(); ++y)
      for (int x = 0; x < w / 2; ++x)
        std::swap(img.at(0, c, y, x), img.at(0, c, y, w - 1 - x));
  for (BoundingBox& b : boxes) {
    const float x1 = static_cast<float>(w) - b.x2;
    b.x2 = static_cast<float>(w) - b.x1;
    b.x1 = x1;
  }
}

template <typename T>
class Trainer {
 public:
  Trainer(Graph<T>& g, TrainConfig cfg) : g_(g), cfg_(cfg), rng_(cfg.seed) {
    SCN_CHECK(cfg.epochs > 0 && cfg.batch_size > 0, "train: epochs and batch size must be positive");
    SCN_CHECK(g.attach_index() >= 0, "train: spec has no attach point to supervise");
  }

  // Accumulates one image's gradients into the graph and returns its losses.
  LossBreakdown<T> step(const Tensor<T>& img, const std::vector<BoundingBox>& boxes,
                        double* density = nullptr, double* reduction = nullptr) {
    const bool direct = g_.spec().supervision == Supervision::Direct;
    ForwardOut<T> fo =
        g_.forward(img, direct ? RunMode::TrainDirect : RunMode::TrainIndirect);

    std::vector<T> logits, loc;
    g_.flatten_heads(fo.heads, logits, loc);
    const MatchResult mr = g_.match(fo, boxes);
    const int cp1 = g_.spec().num_classes + 1;
    std::vector<T> glogits(logits.size(), T(0)), gloc(loc.size(), T(0));
    const LossValue<T> lc = loss_cls(logits, cp1, mr, &glogits);
    const LossValue<T> ll = loss_loc(loc, mr, &gloc);
    for (T& v : gloc) v *= static_cast<T>(cfg_.lambda1);

    T lm = T(0);
    ProbMap<T> gprob;
    if (direct) {
      gprob = ProbMap<T>(fo.prob.h, fo.prob.w);
      lm = loss_mask(fo.prob, g_.gt_base_mask(boxes), &gprob);
      for (T& v : gprob.v) v *= static_cast<T>(cfg_.lambda2);
    }

    const std::vector<HeadOutput<T>> ghead = g_.scatter_head_grads(glogits, gloc);
    g_.backward(img, fo, ghead, direct ? &gprob : nullptr);

    if (density) {
      const SaliencyMask base =
          direct ? fo.base_mask : binarize(fo.prob, T(0.5));
      *density = base.density();
    }
    if (reduction) *reduction = guided_reduction(fo);
    return combine_losses(lc, ll, lm, static_cast<T>(cfg_.lambda1),
                          static_cast<T>(cfg_.lambda2));
  }

  // Momentum SGD over the accumulated gradients of `batch_n` images.
  void apply_update(double lr_now, int batch_n) {
    auto ps = g_.params();
    if (velocity_.empty()) {
      velocity_.resize(ps.size());
      for (size_t i = 0; i < ps.size(); ++i) {
        const Tensor<T>& v = *ps[i].value;
        velocity_[i].resize(v.n(), v.c(), v.h(), v.w());
      }
    }
    const T inv_n = T(1) / static_cast<T>(batch_n);
    for (size_t i = 0; i < ps.size(); ++i) {
      if (!ps[i].trainable) continue;
      Tensor<T>& v = *ps[i].value;
      Tensor<T>& g = *ps[i].grad;
      Tensor<T>& vel = velocity_[i];
      const T wd = ps[i].decay ? static_cast<T>(cfg_.weight_decay) : T(0);
      for (long long k = 0; k < v.numel(); ++k) {
        const T step = g.data()[k] * inv_n + wd * v.data()[k];
        vel.data()[k] =
            static_cast<T>(cfg_.momentum) * vel.data()[k] - static_cast<T>(lr_now) * step;
        v.data()[k] += vel.data()[k];
      }
    }
    g_.zero_grads();
  }

  // Full run over the dataset. Aborts with a diagnostic if the loss leaves
  // the reals; the schedule drops the rate once, at two thirds of the run.
  std::vector<EpochStats> fit(const std::vector<SyntheticScene<T>>& data) {
    SCN_CHECK(!data.empty(), "train: empty dataset");
    std::vector<EpochStats> history;
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int e = 0; e < cfg_.epochs; ++e) {
      const double lr_now = cfg_.lr * (3 * e >= 2 * cfg_.epochs ? 0.1 : 1.0);
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng_.below(static_cast<int>(i)))]);

      EpochStats st;
      st.epoch = e;
      int in_batch = 0;
      for (size_t n = 0; n < order.size(); ++n) {
        const SyntheticScene<T>& sc = data[order[n]];
        double density = 0, reduction = 0;
        LossBreakdown<T> b;
        if (cfg_.flip && rng_.uniform() < 0.5) {
          Tensor<T> img = sc.image;
          std::vector<BoundingBox> boxes = sc.boxes;
          flip_horizontal(img, boxes);
          b = step(img, boxes, &density, &reduction);
        } else {
          b = step(sc.image, sc.boxes, &density, &reduction);
        }
        if (!std::isfinite(static_cast<double>(b.total)))
          fail("train: loss diverged at epoch ", e, ", sample ", order[n],
               " (L=", static_cast<double>(b.total), ", lr=", lr_now, ")");
        st.total += static_cast<double>(b.total);
        st.cls += static_cast<double>(b.cls);
        st.loc += static_cast<double>(b.loc);
        st.mask += static_cast<double>(b.mask);
        st.mask_density += density;
        st.flops_reduction += reduction;
        if (++in_batch == cfg_.batch_size || n + 1 == order.size()) {
          apply_update(lr_now, in_batch);
          in_batch = 0;
        }
      }
      const double inv = 1.0 / static_cast<double>(order.size());
      st.total *= inv;
      st.cls *= inv;
      st.loc *= inv;
      st.mask *= inv;
      st.mask_density *= inv;
      st.flops_reduction *= inv;
      history.push_back(st);
    }
    return history;
  }

 private:
  // Guided-layer reduction for this image. Hard runs price the executed
  // masks exactly; soft runs report the analytic figure at the densities the
  // binarized map would produce under maxpool downsampling (an indicator,
  // not an executed count; soft passes run dense by definition).
  double guided_reduction(const ForwardOut<T>& fo) {
    if (!fo.hard_levels.empty()) return flops_report(g_, fo).guided_reduced_percent();
    const SaliencyMask base = binarize(fo.prob, T(0.5));
    std::vector<double> dens;
    for (int i : g_.guided_indices()) {
      const int f = g_.pyramid_factor(i);
      dens.push_back(f == 1 ? base.density() : downsample_maxpool(base, f).density());
    }
    return flops_report(g_, dens).guided_reduced_percent();
  }

  Graph<T>& g_;
  TrainConfig cfg_;
  Rng rng_;
  std::vector<Tensor<T>> velocity_;
};

// Mask-quality figures on a held-out set, from hard inference passes.
struct MaskEval {
  double lm = 0;                // mean pixel cross entropy at the attach grid
  double recall = 0;            // predicted foreground hits / gt foreground cells
  double guided_reduction = 0;  // mean percent over images, executed pricing
};

template <typename T>
MaskEval evaluate_masks(Graph<T>& g, const std::vector<SyntheticScene<T>>& scenes) {
  SCN_CHECK(!scenes.empty(), "evaluate_masks: empty set");
  MaskEval ev;
  long long gt_cells = 0, hit_cells = 0;
  for (const SyntheticScene<T>& sc : scenes) {
    ForwardOut<T> fo = g.forward(sc.image, RunMode::Inference);
    const SaliencyMask gt = g.gt_base_mask(sc.boxes);
    ev.lm += static_cast<double>(loss_mask(fo.prob, gt, static_cast<ProbMap<T>*>(nullptr)));
    for (int y = 0; y < gt.h(); ++y)
      for (int x = 0; x < gt.w(); ++x) {
        if (!gt.bit(y, x)) continue;
        ++gt_cells;
        hit_cells += fo.base_mask.bit(y, x);
      }
    ev.guided_reduction += flops_report(g, fo).guided_reduced_percent();
  }
  ev.lm /= static_cast<double>(scenes.size());
  ev.guided_reduction /= static_cast<double>(scenes.size());
  ev.recall = gt_cells == 0 ? 1.0 : static_cast<double>(hit_cells) / static_cast<double>(gt_cells);
  return ev;
}

}  // namespace scn
