#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "scn/common.hpp"
#include "scn/mask.hpp"
#include "scn/tensor.hpp"

namespace scn {

struct Anchor {
  float cx = 0, cy = 0, w = 0, h = 0;  // pixel units
};

// One detection head: reads a trunk layer and predicts, per cell, one box and
// one class distribution for each (scale, ratio) pair.
struct HeadSpec {
  std::string layer;
  std::vector<float> scales;  // anchor side lengths in pixels
  std::vector<float> ratios;  // width/height aspect ratios
  int anchors_override = 0;   // spec-sheet anchor count for cost analysis only
  int kernel = 3;             // prediction conv size; some detectors use 1x1

  int num_anchors() const {
    if (anchors_override > 0) return anchors_override;
    return static_cast<int>(scales.size() * ratios.size());
  }
};

// Anchor grid for one head: cells row-major, anchors scale-major within a
// cell. Centers sit at cell centers in image coordinates.
inline std::vector<Anchor> make_anchors(const HeadSpec& spec, int feat_h, int feat_w, int img_h,
                                        int img_w) {
  SCN_CHECK(!spec.scales.empty() && !spec.ratios.empty(),
            "make_anchors: head needs scales and ratios");
  const float step_y = static_cast<float>(img_h) / feat_h;
  const float step_x = static_cast<float>(img_w) / feat_w;
  std::vector<Anchor> out;
  out.reserve(static_cast<size_t>(feat_h) * feat_w * spec.scales.size() * spec.ratios.size());
  for (int y = 0; y < feat_h; ++y)
    for (int x = 0; x < feat_w; ++x)
      for (float s : spec.scales)
        for (float r : spec.ratios) {
          SCN_CHECK(s > 0 && r > 0, "make_anchors: scales and ratios must be positive");
          const float sr = std::sqrt(r);
          out.push_back(Anchor{(x + 0.5f) * step_x, (y + 0.5f) * step_y, s * sr, s / sr});
        }
  return out;
}

inline float box_area(const BoundingBox& b) {
  return std::max(0.0f, b.x2 - b.x1) * std::max(0.0f, b.y2 - b.y1);
}

inline float iou(const BoundingBox& a, const BoundingBox& b) {
  const float ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
  const float ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
  const float iw = std::max(0.0f, ix2 - ix1), ih = std::max(0.0f, iy2 - iy1);
  const float inter = iw * ih;
  const float uni = box_area(a) + box_area(b) - inter;
  return uni > 0 ? inter / uni : 0.0f;
}

inline BoundingBox anchor_to_box(const Anchor& a) {
  return BoundingBox{a.cx - a.w / 2, a.cy - a.h / 2, a.cx + a.w / 2, a.cy + a.h / 2, 0};
}

// SSD-style box coding with variances 0.1 (center) and 0.2 (size).
constexpr float kCenterVariance = 0.1f;
constexpr float kSizeVariance = 0.2f;

inline std::array<float, 4> encode_box(const BoundingBox& gt, const Anchor& a) {
  const float gw = gt.x2 - gt.x1, gh = gt.y2 - gt.y1;
  SCN_CHECK(gw > 0 && gh > 0, "encode_box: degenerate ground-truth box");
  const float gcx = gt.x1 + gw / 2, gcy = gt.y1 + gh / 2;
  return {(gcx - a.cx) / (a.w * kCenterVariance), (gcy - a.cy) / (a.h * kCenterVariance),
          std::log(gw / a.w) / kSizeVariance, std::log(gh / a.h) / kSizeVariance};
}

inline BoundingBox decode_box(const float* t, const Anchor& a) {
  const float cx = t[0] * kCenterVariance * a.w + a.cx;
  const float cy = t[1] * kCenterVariance * a.h + a.cy;
  const float w = std::exp(t[2] * kSizeVariance) * a.w;
  const float h = std::exp(t[3] * kSizeVariance) * a.h;
  return BoundingBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, 0};
}

struct Detection {
  int class_id = 0;  // zero-based foreground class
  float score = 0;
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  long long anchor_index = -1;  // global anchor ordinal, for deterministic ties
};

// Raw per-head predictions: cls (1, A*(C+1), h, w), loc (1, A*4, h, w).
template <typename T>
struct HeadOutput {
  Tensor<T> cls;
  Tensor<T> loc;
};

namespace detail {

template <typename T>
void softmax_row(const T* in, int n, T* out) {
  T mx = in[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  T denom = T(0);
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    denom += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= denom;
}

}  // namespace detail

// Greedy per-class NMS. Candidates are visited in (score desc, anchor asc)
// order; a candidate is kept iff it overlaps no kept box above iou_thresh.
inline std::vector<Detection> nms_per_class(std::vector<Detection> cands, float iou_thresh) {
  std::sort(cands.begin(), cands.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.anchor_index < b.anchor_index;
  });
  std::vector<Detection> kept;
  for (const Detection& c : cands) {
    bool keep = true;
    for (const Detection& k : kept) {
      BoundingBox bc{c.x1, c.y1, c.x2, c.y2, 0}, bk{k.x1, k.y1, k.x2, k.y2, 0};
      if (iou(bc, bk) > iou_thresh) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(c);
  }
  return kept;
}

// Full post-processing: per-anchor softmax, mask suppression, decode, clamp,
// per-class NMS, then a global sort (score desc, anchor asc, class asc).
// masks_per_head entries may be null for dense heads; a masked-out cell's
// anchors are skipped outright, never decoded.
template <typename T>
std::vector<Detection> decode_detections(const std::vector<HeadOutput<T>>& heads,
                                         const std::vector<std::vector<Anchor>>& anchors_per_head,
                                         const std::vector<const SaliencyMask*>& masks_per_head,
                                         int num_classes, float score_thresh, float iou_thresh,
                                         int img_w, int img_h) {
  SCN_CHECK(heads.size() == anchors_per_head.size() && heads.size() == masks_per_head.size(),
            "decode_detections: per-head array size mismatch");
  const int cp1 = num_classes + 1;
  std::vector<std::vector<Detection>> per_class(num_classes);
  std::vector<T> probs(cp1), logits(cp1);
  long long anchor_base = 0;
  for (size_t hi = 0; hi < heads.size(); ++hi) {
    const Tensor<T>& cls = heads[hi].cls;
    const Tensor<T>& loc = heads[hi].loc;
    const int fh = cls.h(), fw = cls.w();
    const int a_per_cell = cls.c() / cp1;
    SCN_CHECK(a_per_cell * cp1 == cls.c() && loc.c() == a_per_cell * 4,
              "decode_detections: head channel layout mismatch");
    SCN_CHECK(anchors_per_head[hi].size() == static_cast<size_t>(fh) * fw * a_per_cell,
              "decode_detections: anchor count mismatch");
    const SaliencyMask* mask = masks_per_head[hi];
    if (mask)
      SCN_CHECK(mask->h() == fh && mask->w() == fw, "decode_detections: mask grid mismatch");
    for (int y = 0; y < fh; ++y)
      for (int x = 0; x < fw; ++x) {
        if (mask && !mask->bit(y, x)) continue;  // suppressed cell
        for (int a = 0; a < a_per_cell; ++a) {
          const long long anchor_idx =
              anchor_base + (static_cast<long long>(y) * fw + x) * a_per_cell + a;
          for (int k = 0; k < cp1; ++k) logits[k] = cls.at(0, a * cp1 + k, y, x);
          detail::softmax_row(logits.data(), cp1, probs.data());
          float t[4];
          for (int k = 0; k < 4; ++k) t[k] = static_cast<float>(loc.at(0, a * 4 + k, y, x));
          for (int c = 1; c < cp1; ++c) {
            const float score = static_cast<float>(probs[c]);
            if (score < score_thresh) continue;
            BoundingBox box = decode_box(t, anchors_per_head[hi][anchor_idx - anchor_base]);
            box.x1 = std::clamp(box.x1, 0.0f, static_cast<float>(img_w));
            box.x2 = std::clamp(box.x2, 0.0f, static_cast<float>(img_w));
            box.y1 = std::clamp(box.y1, 0.0f, static_cast<float>(img_h));
            box.y2 = std::clamp(box.y2, 0.0f, static_cast<float>(img_h));
            per_class[c - 1].push_back(
                Detection{c - 1, score, box.x1, box.y1, box.x2, box.y2, anchor_idx});
          }
        }
      }
    anchor_base += static_cast<long long>(fh) * fw * a_per_cell;
  }
  std::vector<Detection> out;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<Detection> kept = nms_per_class(std::move(per_class[c]), iou_thresh);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.anchor_index != b.anchor_index) return a.anchor_index < b.anchor_index;
    return a.class_id < b.class_id;
  });
  return out;
}

}  // namespace scn
