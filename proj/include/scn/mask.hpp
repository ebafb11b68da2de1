#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <vector>

#include "scn/common.hpp"
#include "scn/tensor.hpp"

namespace scn {

// Binary saliency mask over a feature grid, bit-packed per row. Padding bits
// in the last word of a row are kept at zero so whole-word ops (popcount,
// equality) need no masking.
class SaliencyMask {
 public:
  SaliencyMask() = default;
  SaliencyMask(int h, int w) : h_(h), w_(w), wpr_((w + 63) / 64) {
    SCN_CHECK(h >= 0 && w >= 0, "mask dims must be non-negative");
    bits_.assign(static_cast<size_t>(h_) * wpr_, 0);
  }

  static SaliencyMask all_ones(int h, int w) {
    SaliencyMask m(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) m.set(y, x, 1);
    return m;
  }

  int h() const { return h_; }
  int w() const { return w_; }

  int bit(int y, int x) const {
    return static_cast<int>((word(y, x) >> (x & 63)) & 1u);
  }

  void set(int y, int x, int v) {
    uint64_t& wd = word(y, x);
    const uint64_t m = 1ull << (x & 63);
    if (v)
      wd |= m;
    else
      wd &= ~m;
  }

  long long ones() const {
    long long n = 0;
    for (uint64_t wd : bits_) n += std::popcount(wd);
    return n;
  }

  double density() const {
    const long long total = static_cast<long long>(h_) * w_;
    return total == 0 ? 0.0 : static_cast<double>(ones()) / static_cast<double>(total);
  }

  bool operator==(const SaliencyMask& o) const {
    return h_ == o.h_ && w_ == o.w_ && bits_ == o.bits_;
  }

  // true if every set bit of this mask is also set in o
  bool subset_of(const SaliencyMask& o) const {
    SCN_CHECK(h_ == o.h_ && w_ == o.w_, "subset_of: dim mismatch");
    for (size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i] & ~o.bits_[i]) return false;
    return true;
  }

 private:
  uint64_t& word(int y, int x) { return bits_[static_cast<size_t>(y) * wpr_ + (x >> 6)]; }
  const uint64_t& word(int y, int x) const {
    return bits_[static_cast<size_t>(y) * wpr_ + (x >> 6)];
  }

  int h_ = 0, w_ = 0, wpr_ = 0;
  std::vector<uint64_t> bits_;
};

inline double density(const SaliencyMask& m) { return m.density(); }

// Per-cell foreground probability, same grid as the mask it binarizes to.
template <typename T>
struct ProbMap {
  int h = 0, w = 0;
  std::vector<T> v;

  ProbMap() = default;
  ProbMap(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, T(0)) {}

  T& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  const T& at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  long long numel() const { return static_cast<long long>(v.size()); }
};

// bit = 1 iff p >= psi. Inclusive threshold: an exactly-0.5 cell at the
// default psi stays selected.
template <typename T>
SaliencyMask binarize(const ProbMap<T>& p, T psi) {
  SaliencyMask m(p.h, p.w);
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x)
      if (p.at(y, x) >= psi) m.set(y, x, 1);
  return m;
}

struct BoundingBox {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // pixel coords, x2/y2 exclusive-ish edges
  int class_id = 0;
};

// Training target for the probability map: mark every cell whose s x s pixel
// footprint intersects a box, then grow the marked set by one cell in all 8
// directions (clamped to the grid).
inline SaliencyMask gt_mask_from_boxes(const std::vector<BoundingBox>& boxes, int image_h,
                                       int image_w, int stride) {
  SCN_CHECK(stride > 0, "gt_mask_from_boxes: stride must be positive");
  const int gh = (image_h + stride - 1) / stride;
  const int gw = (image_w + stride - 1) / stride;
  SaliencyMask hit(gh, gw);
  for (const BoundingBox& b : boxes) {
    if (b.x2 <= b.x1 || b.y2 <= b.y1) continue;
    int cx0 = std::max(0, static_cast<int>(std::floor(b.x1 / stride)));
    int cy0 = std::max(0, static_cast<int>(std::floor(b.y1 / stride)));
    int cx1 = std::min(gw - 1, static_cast<int>(std::ceil(b.x2 / stride)) - 1);
    int cy1 = std::min(gh - 1, static_cast<int>(std::ceil(b.y2 / stride)) - 1);
    for (int y = cy0; y <= cy1; ++y)
      for (int x = cx0; x <= cx1; ++x) hit.set(y, x, 1);
  }
  SaliencyMask out(gh, gw);
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) {
      if (!hit.bit(y, x)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < gh && nx >= 0 && nx < gw) out.set(ny, nx, 1);
        }
    }
  return out;
}

// Downsample by factor f via an f x f, stride-f convolution over the 0/1
// bits, then re-binarize at 0.5. Empty weights mean the fixed uniform kernel
// 1/f^2 (bit survives iff at least half the block is set).
inline SaliencyMask downsample_stride_conv(const SaliencyMask& m, int f,
                                           const std::vector<float>& weights = {}) {
  SCN_CHECK(f > 0, "downsample: factor must be positive");
  SCN_CHECK(m.h() % f == 0 && m.w() % f == 0, "downsample: mask dims ", m.h(), "x", m.w(),
            " not divisible by factor ", f);
  const bool uniform = weights.empty();
  if (!uniform)
    SCN_CHECK(static_cast<int>(weights.size()) == f * f, "downsample: weight size != f*f");
  const float u = 1.0f / static_cast<float>(f * f);
  SaliencyMask out(m.h() / f, m.w() / f);
  for (int y = 0; y < out.h(); ++y)
    for (int x = 0; x < out.w(); ++x) {
      float acc = 0.0f;
      for (int ky = 0; ky < f; ++ky)
        for (int kx = 0; kx < f; ++kx)
          if (m.bit(y * f + ky, x * f + kx)) acc += uniform ? u : weights[ky * f + kx];
      if (acc >= 0.5f) out.set(y, x, 1);
    }
  return out;
}

// Downsample by factor f with a block-OR: output bit set iff any bit in the
// f x f block is set. Never loses foreground, which is why it is the
// conservative alternative.
inline SaliencyMask downsample_maxpool(const SaliencyMask& m, int f) {
  SCN_CHECK(f > 0, "downsample: factor must be positive");
  SCN_CHECK(m.h() % f == 0 && m.w() % f == 0, "downsample: mask dims not divisible by factor");
  SaliencyMask out(m.h() / f, m.w() / f);
  for (int y = 0; y < out.h(); ++y)
    for (int x = 0; x < out.w(); ++x) {
      int v = 0;
      for (int ky = 0; ky < f && !v; ++ky)
        for (int kx = 0; kx < f; ++kx)
          if (m.bit(y * f + ky, x * f + kx)) {
            v = 1;
            break;
          }
      if (v) out.set(y, x, 1);
    }
  return out;
}

// Soft counterpart of downsample_stride_conv for probability maps: stride-f
// conv, result clamped to [0, 1]. The clamp gate is recorded so the backward
// pass can cut gradients at saturated cells. With the uniform kernel the
// result is a block mean and the clamp never engages.
template <typename T>
struct ProbDownsampleTape {
  std::vector<uint8_t> pass;  // 1 where the clamp was inactive
};

template <typename T>
ProbMap<T> prob_downsample_stride(const ProbMap<T>& p, int f, const std::vector<T>& weights,
                                  ProbDownsampleTape<T>* tape = nullptr) {
  SCN_CHECK(f > 0, "prob_downsample: factor must be positive");
  SCN_CHECK(p.h % f == 0 && p.w % f == 0, "prob_downsample: dims not divisible by factor");
  const bool uniform = weights.empty();
  if (!uniform)
    SCN_CHECK(static_cast<int>(weights.size()) == f * f, "prob_downsample: weight size != f*f");
  const T u = T(1) / static_cast<T>(f * f);
  ProbMap<T> out(p.h / f, p.w / f);
  if (tape) tape->pass.assign(static_cast<size_t>(out.numel()), 1);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      T acc = T(0);
      for (int ky = 0; ky < f; ++ky)
        for (int kx = 0; kx < f; ++kx)
          acc += (uniform ? u : weights[ky * f + kx]) * p.at(y * f + ky, x * f + kx);
      T clamped = acc;
      if (clamped < T(0)) clamped = T(0);
      if (clamped > T(1)) clamped = T(1);
      if (tape && clamped != acc) tape->pass[static_cast<size_t>(y) * out.w + x] = 0;
      out.at(y, x) = clamped;
    }
  return out;
}

// Gradients w.r.t. the input map and (optionally) the kernel weights.
template <typename T>
void prob_downsample_stride_bwd(const ProbMap<T>& gy, const ProbMap<T>& p, int f,
                                const std::vector<T>& weights, const ProbDownsampleTape<T>& tape,
                                ProbMap<T>& gp, std::vector<T>* gweights) {
  const bool uniform = weights.empty();
  const T u = T(1) / static_cast<T>(f * f);
  SCN_CHECK(gp.h == p.h && gp.w == p.w, "prob_downsample_bwd: grad shape mismatch");
  for (int y = 0; y < gy.h; ++y)
    for (int x = 0; x < gy.w; ++x) {
      if (!tape.pass[static_cast<size_t>(y) * gy.w + x]) continue;
      const T g = gy.at(y, x);
      if (g == T(0)) continue;
      for (int ky = 0; ky < f; ++ky)
        for (int kx = 0; kx < f; ++kx) {
          gp.at(y * f + ky, x * f + kx) += g * (uniform ? u : weights[ky * f + kx]);
          if (gweights) (*gweights)[ky * f + kx] += g * p.at(y * f + ky, x * f + kx);
        }
    }
}

// --- PGM (P5, maxval 255) serialisation: 0 for background, 255 for set ---

inline void write_pgm(const SaliencyMask& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  SCN_CHECK(f.good(), "write_pgm: cannot open ", path);
  f << "P5\n" << m.w() << " " << m.h() << "\n255\n";
  std::vector<unsigned char> row(m.w());
  for (int y = 0; y < m.h(); ++y) {
    for (int x = 0; x < m.w(); ++x) row[x] = m.bit(y, x) ? 255 : 0;
    f.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  SCN_CHECK(f.good(), "write_pgm: write failed for ", path);
}

namespace detail {
inline int pnm_next_int(std::istream& is) {
  // skips whitespace and '#' comments, as the format allows
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  SCN_CHECK(c != EOF && std::isdigit(c), "pnm: malformed header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}
}  // namespace detail

inline SaliencyMask read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SCN_CHECK(f.good(), "read_pgm: cannot open ", path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  SCN_CHECK(m0 == 'P' && m1 == '5', "read_pgm: not a P5 file: ", path);
  const int w = detail::pnm_next_int(f);
  const int h = detail::pnm_next_int(f);
  const int maxval = detail::pnm_next_int(f);
  SCN_CHECK(maxval == 255, "read_pgm: unsupported maxval ", maxval);
  SaliencyMask m(h, w);
  std::vector<unsigned char> row(w);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), row.size());
    SCN_CHECK(f.gcount() == static_cast<std::streamsize>(row.size()),
              "read_pgm: truncated pixel data in ", path);
    for (int x = 0; x < w; ++x)
      if (row[x] >= 128) m.set(y, x, 1);
  }
  return m;
}

}  // namespace scn
