#pragma once
// Synthetic detection scenes: 1-4 solid shapes (rectangle, ellipse, triangle)
// on a textured low-intensity background. Foreground colors sit well above
// the background band so the mask branch has signal to find; boxes are
// recomputed from the painted pixels, so they are tight by construction.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "scn/common.hpp"
#include "scn/io.hpp"
#include "scn/mask.hpp"
#include "scn/tensor.hpp"

namespace scn {

template <typename T>
struct SyntheticScene {
  Tensor<T> image;  // 1 x 3 x h x w, values in [0, 1]
  std::vector<BoundingBox> boxes;
};

namespace shapes {

// class ids double as shape selectors
constexpr int kRectangle = 0;
constexpr int kEllipse = 1;
constexpr int kTriangle = 2;

inline bool boxes_touch(const BoundingBox& a, const BoundingBox& b, float margin) {
  return a.x1 < b.x2 + margin && b.x1 < a.x2 + margin && a.y1 < b.y2 + margin &&
         b.y1 < a.y2 + margin;
}

// pixel-center membership test for one shape inside its nominal box
inline bool covers(int cls, float px, float py, float x1, float y1, float bw, float bh,
                   float apex) {
  if (cls == kRectangle) return true;
  if (cls == kEllipse) {
    const float a = bw / 2, b = bh / 2;
    const float dx = (px - (x1 + a)) / a, dy = (py - (y1 + b)) / b;
    return dx * dx + dy * dy <= 1.0f;
  }
  // triangle: apex on the top edge, base spanning the bottom edge
  const float ax = x1 + apex * bw, ay = y1;
  const float bx = x1, by = y1 + bh;
  const float cx = x1 + bw, cy = y1 + bh;
  auto side = [](float ox, float oy, float ex, float ey, float qx, float qy) {
    return (ex - ox) * (qy - oy) - (ey - oy) * (qx - ox);
  };
  const float d1 = side(ax, ay, bx, by, px, py);
  const float d2 = side(bx, by, cx, cy, px, py);
  const float d3 = side(cx, cy, ax, ay, px, py);
  const bool any_neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool any_pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(any_neg && any_pos);
}

}  // namespace shapes

template <typename T>
SyntheticScene<T> make_scene(Rng& rng, int h = 64, int w = 64) {
  SyntheticScene<T> sc;
  sc.image.resize(1, 3, h, w);

  // background: per-channel base tone, two low-frequency waves, fine grain
  for (int c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.10, 0.30);
    const double fx = rng.uniform(0.5, 2.0) * 6.283185307179586 / w;
    const double fy = rng.uniform(0.5, 2.0) * 6.283185307179586 / h;
    const double phx = rng.uniform(0.0, 6.28), phy = rng.uniform(0.0, 6.28);
    const double ax = rng.uniform(0.02, 0.06), ay = rng.uniform(0.02, 0.06);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = base + ax * std::sin(fx * x + phx) + ay * std::sin(fy * y + phy) +
                   rng.uniform(-0.02, 0.02);
        sc.image.at(0, c, y, x) = static_cast<T>(std::clamp(v, 0.0, 0.42));
      }
  }

  const int want = 1 + rng.below(4);
  for (int k = 0; k < want; ++k) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      const float bw = static_cast<float>(10 + rng.below(17));  // 10..26 px
      const float bh = static_cast<float>(10 + rng.below(17));
      const float x1 = static_cast<float>(1 + rng.below(w - 2 - static_cast<int>(bw)));
      const float y1 = static_cast<float>(1 + rng.below(h - 2 - static_cast<int>(bh)));
      const BoundingBox nominal{x1, y1, x1 + bw, y1 + bh, 0};
      bool clash = false;
      for (const BoundingBox& b : sc.boxes) clash = clash || shapes::boxes_touch(nominal, b, 2.0f);
      if (clash) continue;

      const int cls = rng.below(3);
      const float apex = static_cast<float>(rng.uniform(0.3, 0.7));
      float color[3];
      for (float& cc : color) cc = static_cast<float>(rng.uniform(0.55, 0.95));

      int min_x = w, min_y = h, max_x = -1, max_y = -1;
      for (int y = static_cast<int>(y1); y < static_cast<int>(y1 + bh); ++y)
        for (int x = static_cast<int>(x1); x < static_cast<int>(x1 + bw); ++x) {
          if (!shapes::covers(cls, x + 0.5f, y + 0.5f, x1, y1, bw, bh, apex)) continue;
          for (int c = 0; c < 3; ++c) sc.image.at(0, c, y, x) = static_cast<T>(color[c]);
          min_x = std::min(min_x, x);
          min_y = std::min(min_y, y);
          max_x = std::max(max_x, x);
          max_y = std::max(max_y, y);
        }
      if (max_x < 0) continue;  // degenerate raster, retry elsewhere

      BoundingBox tight;
      tight.x1 = static_cast<float>(min_x);
      tight.y1 = static_cast<float>(min_y);
      tight.x2 = static_cast<float>(max_x + 1);
      tight.y2 = static_cast<float>(max_y + 1);
      tight.class_id = cls;
      sc.boxes.push_back(tight);
      break;
    }
  }
  return sc;
}

// Seed-split per sample: scene i depends only on (seed, i), so datasets are
// reproducible and stable under changes of n.
template <typename T>
std::vector<SyntheticScene<T>> make_dataset(int n, uint64_t seed, int h = 64, int w = 64) {
  SCN_CHECK(n > 0, "make_dataset: need at least one scene");
  std::vector<SyntheticScene<T>> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(seed * 0x100000001b3ull + static_cast<uint64_t>(i) + 1);
    out.push_back(make_scene<T>(rng, h, w));
  }
  return out;
}

inline std::string sample_stem(int index) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "sample_%04d", index);
  return buf;
}

template <typename T>
void save_dataset(const std::string& dir, const std::vector<SyntheticScene<T>>& scenes) {
  for (size_t i = 0; i < scenes.size(); ++i) {
    const std::string stem = dir + "/" + sample_stem(static_cast<int>(i));
    write_ppm(stem + ".ppm", scenes[i].image);
    write_boxes(stem + ".txt", scenes[i].boxes);
  }
}

// Loads sample_0000.. until the numbering breaks. Pixel values come back
// 8-bit quantized, which is exactly what training on disk data sees.
template <typename T>
std::vector<SyntheticScene<T>> load_dataset(const std::string& dir) {
  std::vector<SyntheticScene<T>> out;
  for (int i = 0;; ++i) {
    const std::string stem = dir + "/" + sample_stem(i);
    std::ifstream probe(stem + ".ppm", std::ios::binary);
    if (!probe.good()) break;
    probe.close();
    SyntheticScene<T> sc;
    sc.image = read_ppm<T>(stem + ".ppm");
    sc.boxes = read_boxes(stem + ".txt");
    out.push_back(std::move(sc));
  }
  if (out.empty()) schema_fail("dataset: no sample_0000.ppm under '", dir, "'");
  return out;
}

}  // namespace scn
