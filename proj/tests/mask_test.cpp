#include "scn/mask.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "scn/gradcheck.hpp"
#include "test_util.hpp"

using namespace scn;
using namespace scn::testutil;

TEST(SaliencyMask, SetBitOnesDensity) {
  SaliencyMask m(4, 70);  // width spans two 64-bit words per row
  EXPECT_EQ(m.ones(), 0);
  m.set(0, 0, 1);
  m.set(3, 69, 1);
  m.set(1, 64, 1);
  EXPECT_EQ(m.bit(0, 0), 1);
  EXPECT_EQ(m.bit(3, 69), 1);
  EXPECT_EQ(m.bit(1, 64), 1);
  EXPECT_EQ(m.bit(1, 63), 0);
  EXPECT_EQ(m.ones(), 3);
  m.set(0, 0, 0);
  EXPECT_EQ(m.ones(), 2);
  EXPECT_DOUBLE_EQ(m.density(), 2.0 / 280.0);
}

TEST(SaliencyMask, EqualityIgnoresConstructionOrder) {
  SaliencyMask a(3, 65), b(3, 65);
  a.set(2, 64, 1);
  a.set(0, 1, 1);
  b.set(0, 1, 1);
  b.set(2, 64, 1);
  b.set(1, 5, 1);
  b.set(1, 5, 0);  // toggling off must restore equality
  EXPECT_TRUE(a == b);
}

TEST(Binarize, ThresholdIsInclusive) {
  ProbMap<float> p(1, 3);
  p.at(0, 0) = 0.5f;
  p.at(0, 1) = 0.4999f;
  p.at(0, 2) = 0.95f;
  SaliencyMask m = binarize(p, 0.5f);
  EXPECT_EQ(m.bit(0, 0), 1);  // exactly at threshold stays selected
  EXPECT_EQ(m.bit(0, 1), 0);
  EXPECT_EQ(m.bit(0, 2), 1);
}

TEST(GtMask, CornerBoxDilatesByOneCell) {
  // 16x16 image, stride 4 -> 4x4 grid. A 4x4 box in the corner covers cell
  // (0,0); dilation grows it to the 2x2 corner block.
  std::vector<BoundingBox> boxes{{0, 0, 4, 4, 0}};
  SaliencyMask m = gt_mask_from_boxes(boxes, 16, 16, 4);
  ASSERT_EQ(m.h(), 4);
  ASSERT_EQ(m.w(), 4);
  EXPECT_EQ(m.ones(), 4);
  EXPECT_EQ(m.bit(0, 0), 1);
  EXPECT_EQ(m.bit(0, 1), 1);
  EXPECT_EQ(m.bit(1, 0), 1);
  EXPECT_EQ(m.bit(1, 1), 1);
  EXPECT_EQ(m.bit(2, 2), 0);
}

TEST(GtMask, BoxTouchingCellEdgeDoesNotLeak) {
  // x2 == 4.0 exactly: the box ends at the boundary of cell column 1, so
  // column 1 gets set only via dilation, column 2 not at all.
  std::vector<BoundingBox> boxes{{0, 0, 4, 16, 0}};
  SaliencyMask m = gt_mask_from_boxes(boxes, 16, 16, 4);
  for (int y = 0; y < 4; ++y) {
    EXPECT_EQ(m.bit(y, 0), 1);
    EXPECT_EQ(m.bit(y, 1), 1);
    EXPECT_EQ(m.bit(y, 2), 0);
  }
}

TEST(GtMask, StraddlingBoxCoversAllTouchedCells) {
  std::vector<BoundingBox> boxes{{3, 3, 9, 9, 0}};
  SaliencyMask m = gt_mask_from_boxes(boxes, 16, 16, 4);
  EXPECT_EQ(m.ones(), 16);  // cells (0..2)^2 hit, dilation reaches row/col 3
}

TEST(GtMask, SupersetOfUndilatedFootprintAndDeterministic) {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<BoundingBox> boxes;
    const int nb = 1 + rng.below(3);
    for (int i = 0; i < nb; ++i) {
      float x1 = static_cast<float>(rng.uniform(0, 60));
      float y1 = static_cast<float>(rng.uniform(0, 60));
      float x2 = x1 + static_cast<float>(rng.uniform(1, 20));
      float y2 = y1 + static_cast<float>(rng.uniform(1, 20));
      boxes.push_back({x1, y1, x2, y2, 0});
    }
    SaliencyMask a = gt_mask_from_boxes(boxes, 64, 64, 8);
    SaliencyMask b = gt_mask_from_boxes(boxes, 64, 64, 8);
    EXPECT_TRUE(a == b);
    // every cell whose footprint intersects a box must be set
    for (int y = 0; y < a.h(); ++y)
      for (int x = 0; x < a.w(); ++x) {
        bool hit = false;
        for (const auto& bb : boxes)
          if (bb.x1 < (x + 1) * 8 && bb.x2 > x * 8 && bb.y1 < (y + 1) * 8 && bb.y2 > y * 8)
            hit = true;
        if (hit) {
          EXPECT_EQ(a.bit(y, x), 1) << "cell " << y << "," << x;
        }
      }
  }
}

TEST(DownsampleStrideConv, HalfBlockSurvivesUniformKernel) {
  SaliencyMask m(2, 2);
  m.set(0, 0, 1);
  m.set(1, 1, 1);  // two of four bits -> uniform conv gives exactly 0.5
  SaliencyMask d = downsample_stride_conv(m, 2);
  ASSERT_EQ(d.h(), 1);
  EXPECT_EQ(d.bit(0, 0), 1);

  SaliencyMask one(2, 2);
  one.set(0, 1, 1);  // 0.25 < 0.5
  EXPECT_EQ(downsample_stride_conv(one, 2).bit(0, 0), 0);
}

TEST(DownsampleStrideConv, CustomWeights) {
  SaliencyMask m(2, 2);
  m.set(0, 0, 1);
  std::vector<float> w{0.9f, 0.0f, 0.0f, 0.0f};
  EXPECT_EQ(downsample_stride_conv(m, 2, w).bit(0, 0), 1);
  std::vector<float> w2{0.4f, 0.0f, 0.0f, 0.0f};
  EXPECT_EQ(downsample_stride_conv(m, 2, w2).bit(0, 0), 0);
}

TEST(DownsampleStrideConv, RejectsIndivisibleDims) {
  SaliencyMask m(6, 6);
  EXPECT_THROW(downsample_stride_conv(m, 4), Error);
  EXPECT_NO_THROW(downsample_stride_conv(m, 2));
}

TEST(DownsampleMaxpool, AnyBitSurvives) {
  SaliencyMask m(4, 4);
  m.set(3, 3, 1);
  SaliencyMask d = downsample_maxpool(m, 2);
  EXPECT_EQ(d.bit(0, 0), 0);
  EXPECT_EQ(d.bit(1, 1), 1);
  EXPECT_EQ(d.ones(), 1);
}

TEST(DownsampleMonotonic, AddingBitsNeverClearsOutput) {
  Rng rng(43);
  for (int trial = 0; trial < 40; ++trial) {
    SaliencyMask m = random_mask(rng, 8, 8, rng.uniform(0.1, 0.9));
    SaliencyMask d0 = downsample_stride_conv(m, 2);
    SaliencyMask p0 = downsample_maxpool(m, 2);
    SaliencyMask m2 = m;
    const int y = rng.below(8), x = rng.below(8);
    m2.set(y, x, 1);
    EXPECT_TRUE(d0.subset_of(downsample_stride_conv(m2, 2)));
    EXPECT_TRUE(p0.subset_of(downsample_maxpool(m2, 2)));
  }
}

TEST(ProbDownsample, UniformKernelIsBlockMean) {
  ProbMap<double> p(2, 2);
  p.at(0, 0) = 0.2;
  p.at(0, 1) = 0.4;
  p.at(1, 0) = 0.6;
  p.at(1, 1) = 0.8;
  ProbMap<double> d = prob_downsample_stride<double>(p, 2, {});
  ASSERT_EQ(d.h, 1);
  EXPECT_DOUBLE_EQ(d.at(0, 0), 0.5);
}

TEST(ProbDownsample, ClampGatesGradient) {
  ProbMap<double> p(2, 2);
  p.at(0, 0) = 0.9;
  p.at(0, 1) = 0.9;
  p.at(1, 0) = 0.9;
  p.at(1, 1) = 0.9;
  std::vector<double> w{1.0, 1.0, 1.0, 1.0};  // sum 3.6 -> clamped to 1
  ProbDownsampleTape<double> tape;
  ProbMap<double> d = prob_downsample_stride(p, 2, w, &tape);
  EXPECT_DOUBLE_EQ(d.at(0, 0), 1.0);
  EXPECT_EQ(tape.pass[0], 0);

  ProbMap<double> gy(1, 1);
  gy.at(0, 0) = 5.0;
  ProbMap<double> gp(2, 2);
  std::vector<double> gw(4, 0.0);
  prob_downsample_stride_bwd(gy, p, 2, w, tape, gp, &gw);
  EXPECT_DOUBLE_EQ(gp.at(0, 0), 0.0);  // saturated cell passes nothing back
  EXPECT_DOUBLE_EQ(gw[0], 0.0);
}

TEST(ProbDownsample, FiniteDifference) {
  Rng rng(47);
  ProbMap<double> p(4, 4);
  for (auto& v : p.v) v = rng.uniform(0.05, 0.9);
  std::vector<double> w{0.3, 0.2, 0.25, 0.15};
  ProbMap<double> r(2, 2);
  for (auto& v : r.v) v = rng.uniform(-1, 1);

  auto loss = [&]() {
    ProbMap<double> d = prob_downsample_stride(p, 2, w);
    double s = 0;
    for (long long i = 0; i < d.numel(); ++i) s += d.v[i] * r.v[i];
    return s;
  };

  ProbDownsampleTape<double> tape;
  prob_downsample_stride(p, 2, w, &tape);
  ProbMap<double> gp(4, 4);
  std::vector<double> gw(4, 0.0);
  prob_downsample_stride_bwd(r, p, 2, w, tape, gp, &gw);

  auto rep = finite_diff_check(loss, p.v.data(), gp.v.data(), p.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "map: " << rep.str();
  rep = finite_diff_check(loss, w.data(), gw.data(), 4);
  EXPECT_LT(rep.max_rel_err, 1e-4) << "kernel: " << rep.str();
}

TEST(Pgm, RoundTrip) {
  Rng rng(53);
  SaliencyMask m = random_mask(rng, 9, 13, 0.4);
  const std::string path = std::filesystem::temp_directory_path() / "scn_mask_rt.pgm";
  write_pgm(m, path);
  SaliencyMask back = read_pgm(path);
  EXPECT_TRUE(m == back);
  std::remove(path.c_str());
}

TEST(Pgm, RejectsMalformed) {
  const std::string path = std::filesystem::temp_directory_path() / "scn_mask_bad.pgm";
  {
    std::ofstream f(path, std::ios::binary);
    f << "P6\n2 2\n255\n";
  }
  EXPECT_THROW(read_pgm(path), Error);
  {
    std::ofstream f(path, std::ios::binary);
    f << "P5\n4 4\n255\n";  // header promises 16 bytes, file has none
  }
  EXPECT_THROW(read_pgm(path), Error);
  std::remove(path.c_str());
}
