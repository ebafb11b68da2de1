#include "scn/train.hpp"

#include <gtest/gtest.h>

#include "scn/io.hpp"
#include "test_util.hpp"

using namespace scn;
using namespace scn::testutil;

namespace {

NetworkSpec trainer_spec(Supervision sup = Supervision::Direct) {
  NetworkSpec s = load_spec(SCN_SOURCE_DIR "/configs/toy64.json");
  s.supervision = sup;
  return s;
}

TrainConfig small_cfg(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.lr = 0.05;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST(Trainer, OneEpochBookkeepingIdentity) {
  Graph<float> g(trainer_spec());
  Rng rng(5);
  g.init_params(rng);
  auto data = make_dataset<float>(8, 21);
  Trainer<float> tr(g, small_cfg(1));
  auto hist = tr.fit(data);
  ASSERT_EQ(hist.size(), 1u);
  const EpochStats& st = hist[0];
  EXPECT_TRUE(std::isfinite(st.total));
  // recorded losses keep the combination identity; the means are linear
  EXPECT_NEAR(st.total, st.cls + st.loc + st.mask, 1e-5);
  EXPECT_GE(st.mask_density, 0.0);
  EXPECT_LE(st.mask_density, 1.0);
}

TEST(Trainer, RunsAreDeterministicGivenSeed) {
  auto run = [] {
    Graph<float> g(trainer_spec());
    Rng rng(5);
    g.init_params(rng);
    auto data = make_dataset<float>(10, 21);
    Trainer<float> tr(g, small_cfg(2));
    return tr.fit(data);
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].total, b[i].total);
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].mask_density, b[i].mask_density);
  }
}

TEST(Trainer, MaskLossStrictlyDecreasesOverFirstFiveEpochs) {
  Graph<float> g(trainer_spec());
  Rng rng(5);
  g.init_params(rng);
  auto data = make_dataset<float>(32, 77);
  Trainer<float> tr(g, small_cfg(5));
  auto hist = tr.fit(data);
  ASSERT_EQ(hist.size(), 5u);
  for (size_t e = 1; e < hist.size(); ++e) EXPECT_LT(hist[e].mask, hist[e - 1].mask);
}

TEST(Trainer, ZeroMaskWeightLeavesModuleGradientsAtZero) {
  Graph<float> g(trainer_spec());
  Rng rng(9);
  g.init_params(rng);
  auto data = make_dataset<float>(4, 33);
  TrainConfig cfg = small_cfg(1);
  cfg.lambda2 = 0.0;
  Trainer<float> tr(g, cfg);
  tr.step(data[0].image, data[0].boxes);
  for (ParamRef<float>& p : g.params()) {
    if (p.name.rfind("mask.", 0) != 0) continue;
    for (long long k = 0; k < p.grad->numel(); ++k) EXPECT_EQ(p.grad->data()[k], 0.0f);
  }
  // the trunk still learns from the detection losses
  double trunk = 0;
  for (ParamRef<float>& p : g.params())
    if (p.name == "c1.w")
      for (long long k = 0; k < p.grad->numel(); ++k)
        trunk += std::abs(static_cast<double>(p.grad->data()[k]));
  EXPECT_GT(trunk, 0.0);
}

TEST(Trainer, IndirectModeRecordsNoMaskTermButTrainsModule) {
  Graph<float> g(trainer_spec(Supervision::Indirect));
  Rng rng(5);
  g.init_params(rng);
  auto data = make_dataset<float>(4, 21);
  Trainer<float> tr(g, small_cfg(1));
  tr.step(data[0].image, data[0].boxes);
  double module = 0;
  for (ParamRef<float>& p : g.params())
    if (p.name.rfind("mask.", 0) == 0)
      for (long long k = 0; k < p.grad->numel(); ++k)
        module += std::abs(static_cast<double>(p.grad->data()[k]));
  EXPECT_GT(module, 0.0);  // default gate lets detection gradients reach it
  g.zero_grads();

  auto hist = tr.fit(data);
  EXPECT_EQ(hist[0].mask, 0.0);
  EXPECT_NEAR(hist[0].total, hist[0].cls + hist[0].loc, 1e-6);
}

TEST(Trainer, DivergenceAbortsWithDiagnostic) {
  Graph<float> g(trainer_spec());
  Rng rng(5);
  g.init_params(rng);
  // poison a head weight; head outputs skip relu, so the NaN reaches the loss
  auto ps = g.params();
  for (ParamRef<float>& p : ps)
    if (p.name == "head.c6.cls_w")
      p.value->data()[0] = std::numeric_limits<float>::quiet_NaN();
  auto data = make_dataset<float>(2, 21);
  Trainer<float> tr(g, small_cfg(1));
  try {
    tr.fit(data);
    FAIL() << "expected divergence abort";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
  }
}
