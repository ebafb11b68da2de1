#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "scn/common.hpp"
#include "scn/detect.hpp"
#include "scn/mask.hpp"

namespace scn {

// Anchor-to-target assignment, flattened across heads in global anchor order.
// ignored anchors sit under masked-out cells and take part in no loss term.
struct MatchResult {
  std::vector<int> target_class;                  // 0 = background, else class_id + 1
  std::vector<std::array<float, 4>> target_offset;
  std::vector<uint8_t> positive;
  std::vector<uint8_t> ignored;
  int num_positive = 0;
  long long num_considered = 0;  // anchors that are not ignored

  long long total() const { return static_cast<long long>(target_class.size()); }
};

// IoU >= pos_iou matches an anchor to its best gt; additionally every gt
// claims its single best non-ignored anchor so no object goes unsupervised.
// Ties go to the lower index on both sides.
inline MatchResult match_anchors(const std::vector<std::vector<Anchor>>& anchors_per_head,
                                 const std::vector<const SaliencyMask*>& masks_per_head,
                                 const std::vector<std::array<int, 2>>& head_grids,
                                 const std::vector<BoundingBox>& gts, float pos_iou = 0.5f) {
  SCN_CHECK(anchors_per_head.size() == masks_per_head.size() &&
                anchors_per_head.size() == head_grids.size(),
            "match_anchors: per-head array size mismatch");
  MatchResult m;
  long long total = 0;
  for (const auto& v : anchors_per_head) total += static_cast<long long>(v.size());
  m.target_class.assign(total, 0);
  m.target_offset.assign(total, {0, 0, 0, 0});
  m.positive.assign(total, 0);
  m.ignored.assign(total, 0);

  // mark ignored anchors from the head masks
  long long base = 0;
  for (size_t hi = 0; hi < anchors_per_head.size(); ++hi) {
    const long long n = static_cast<long long>(anchors_per_head[hi].size());
    const SaliencyMask* mask = masks_per_head[hi];
    if (mask) {
      const int fh = head_grids[hi][0], fw = head_grids[hi][1];
      SCN_CHECK(mask->h() == fh && mask->w() == fw, "match_anchors: mask grid mismatch");
      const int a_per_cell = static_cast<int>(n / (static_cast<long long>(fh) * fw));
      for (long long i = 0; i < n; ++i) {
        const long long cell = i / a_per_cell;
        if (!mask->bit(static_cast<int>(cell) / fw, static_cast<int>(cell) % fw))
          m.ignored[base + i] = 1;
      }
    }
    base += n;
  }

  // per-anchor best gt
  std::vector<float> best_anchor_iou(gts.size(), 0.0f);
  std::vector<long long> best_anchor_idx(gts.size(), -1);
  base = 0;
  for (const auto& anchors : anchors_per_head) {
    for (size_t ai = 0; ai < anchors.size(); ++ai) {
      const long long gi = base + static_cast<long long>(ai);
      if (m.ignored[gi]) continue;
      const BoundingBox abox = anchor_to_box(anchors[ai]);
      float best = 0.0f;
      int best_gt = -1;
      for (size_t t = 0; t < gts.size(); ++t) {
        const float v = iou(abox, gts[t]);
        if (v > best) {
          best = v;
          best_gt = static_cast<int>(t);
        }
        if (v > best_anchor_iou[t]) {
          best_anchor_iou[t] = v;
          best_anchor_idx[t] = gi;
        }
      }
      if (best_gt >= 0 && best >= pos_iou) {
        m.positive[gi] = 1;
        m.target_class[gi] = gts[best_gt].class_id + 1;
        m.target_offset[gi] = encode_box(gts[best_gt], anchors[ai]);
      }
    }
    base += static_cast<long long>(anchors.size());
  }

  // force-match each gt to its best anchor (may overwrite a weaker match)
  for (size_t t = 0; t < gts.size(); ++t) {
    const long long gi = best_anchor_idx[t];
    if (gi < 0 || best_anchor_iou[t] <= 0.0f) continue;
    // locate the anchor again to encode against it
    long long b = 0;
    for (const auto& anchors : anchors_per_head) {
      if (gi < b + static_cast<long long>(anchors.size())) {
        m.positive[gi] = 1;
        m.target_class[gi] = gts[t].class_id + 1;
        m.target_offset[gi] = encode_box(gts[t], anchors[gi - b]);
        break;
      }
      b += static_cast<long long>(anchors.size());
    }
  }

  for (long long i = 0; i < m.total(); ++i) {
    if (!m.ignored[i]) ++m.num_considered;
    if (m.positive[i] && !m.ignored[i]) ++m.num_positive;
  }
  return m;
}

template <typename T>
struct LossValue {
  T value = T(0);
  bool valid = false;  // false when no anchors qualified for this term
};

constexpr double kLogitClamp = 15.0;

// Softmax cross entropy over (num_classes + 1) columns, averaged over
// non-ignored anchors. Logits are clamped to +-15 before the softmax; the
// clamp gates the gradient. glogits (same layout) is accumulated if non-null.
template <typename T>
LossValue<T> loss_cls(const std::vector<T>& logits, int cp1, const MatchResult& m,
                      std::vector<T>* glogits) {
  SCN_CHECK(static_cast<long long>(logits.size()) == m.total() * cp1,
            "loss_cls: logits size mismatch");
  LossValue<T> out;
  if (m.num_considered == 0) return out;  // flagged: no anchors to average over
  const T inv_n = T(1) / static_cast<T>(m.num_considered);
  std::vector<T> clamped(cp1), probs(cp1);
  T acc = T(0);
  for (long long i = 0; i < m.total(); ++i) {
    if (m.ignored[i]) continue;
    const T* row = logits.data() + i * cp1;
    for (int k = 0; k < cp1; ++k)
      clamped[k] = std::min(std::max(row[k], T(-kLogitClamp)), T(kLogitClamp));
    detail::softmax_row(clamped.data(), cp1, probs.data());
    const int tgt = m.target_class[i];
    SCN_CHECK(tgt >= 0 && tgt < cp1, "loss_cls: target class out of range");
    // probs[tgt] >= exp(-30) > 0, no log clamp needed
    acc += -std::log(probs[tgt]);
    if (glogits) {
      T* grow = glogits->data() + i * cp1;
      for (int k = 0; k < cp1; ++k) {
        if (row[k] <= T(-kLogitClamp) || row[k] >= T(kLogitClamp)) continue;
        grow[k] += inv_n * (probs[k] - (k == tgt ? T(1) : T(0)));
      }
    }
  }
  out.value = acc * inv_n;
  out.valid = true;
  return out;
}

template <typename T>
T smooth_l1(T d) {
  const T a = std::abs(d);
  return a < T(1) ? T(0.5) * d * d : a - T(0.5);
}

template <typename T>
T smooth_l1_grad(T d) {
  if (d > T(1)) return T(1);
  if (d < T(-1)) return T(-1);
  return d;
}

// Smooth L1 over the four offsets of positive, non-ignored anchors,
// normalised by the positive count. loc layout: anchor-major, 4 per anchor.
template <typename T>
LossValue<T> loss_loc(const std::vector<T>& loc, const MatchResult& m, std::vector<T>* gloc) {
  SCN_CHECK(static_cast<long long>(loc.size()) == m.total() * 4, "loss_loc: loc size mismatch");
  LossValue<T> out;
  if (m.num_positive == 0) return out;
  const T inv_n = T(1) / static_cast<T>(m.num_positive);
  T acc = T(0);
  for (long long i = 0; i < m.total(); ++i) {
    if (!m.positive[i] || m.ignored[i]) continue;
    const T* row = loc.data() + i * 4;
    for (int k = 0; k < 4; ++k) {
      const T d = row[k] - static_cast<T>(m.target_offset[i][k]);
      acc += smooth_l1(d);
      if (gloc) (*gloc)[i * 4 + k] += inv_n * smooth_l1_grad(d);
    }
  }
  out.value = acc * inv_n;
  out.valid = true;
  return out;
}

// Per-cell binary cross entropy between the predicted probability map and
// the box-derived target mask, averaged over all cells. Probabilities are
// clamped to [eps, 1-eps]; the clamp gates the gradient.
template <typename T>
T loss_mask(const ProbMap<T>& prob, const SaliencyMask& gt, ProbMap<T>* gprob,
            T eps = T(1e-7)) {
  SCN_CHECK(prob.h == gt.h() && prob.w == gt.w(), "loss_mask: grid mismatch ", prob.h, "x",
            prob.w, " vs ", gt.h(), "x", gt.w());
  const long long n = prob.numel();
  SCN_CHECK(n > 0, "loss_mask: empty map");
  const T inv_n = T(1) / static_cast<T>(n);
  T acc = T(0);
  for (int y = 0; y < prob.h; ++y)
    for (int x = 0; x < prob.w; ++x) {
      const T p = prob.at(y, x);
      const T pc = std::min(std::max(p, eps), T(1) - eps);
      const T t = static_cast<T>(gt.bit(y, x));
      acc += -(t * std::log(pc) + (T(1) - t) * std::log(T(1) - pc));
      if (gprob && p > eps && p < T(1) - eps)
        gprob->at(y, x) += inv_n * (pc - t) / (pc * (T(1) - pc));
    }
  return acc * inv_n;
}

// L = Lc + lambda1 * Ll + lambda2 * Lm
template <typename T>
struct LossBreakdown {
  T total = T(0), cls = T(0), loc = T(0), mask = T(0);
  bool cls_valid = false, loc_valid = false;
  T lambda1 = T(1), lambda2 = T(1);
};

template <typename T>
LossBreakdown<T> combine_losses(LossValue<T> cls, LossValue<T> loc, T mask, T lambda1 = T(1),
                                T lambda2 = T(1)) {
  LossBreakdown<T> b;
  b.cls = cls.value;
  b.loc = loc.value;
  b.mask = mask;
  b.cls_valid = cls.valid;
  b.loc_valid = loc.valid;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = b.cls + lambda1 * b.loc + lambda2 * b.mask;
  return b;
}

}  // namespace scn
