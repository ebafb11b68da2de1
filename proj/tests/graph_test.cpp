#include "scn/graph.hpp"

#include <gtest/gtest.h>

#include <functional>

#include "scn/gradcheck.hpp"
#include "test_util.hpp"

using namespace scn;
using namespace scn::testutil;

namespace {

// 16x16 input, attach at 8x8, two guided layers at factors 1 and 2,
// heads on both guided resolutions.
NetworkSpec toy_spec(Supervision sup = Supervision::Direct) {
  NetworkSpec s;
  s.in_channels = 2;
  s.in_h = 16;
  s.in_w = 16;
  s.num_classes = 2;
  s.layers = {
      conv_layer("c1", 4),  // 16x16
      pool_layer("p1"),     // 8x8
      conv_layer("c2", 6),  // 8x8, attach
      conv_layer("c3", 6),  // 8x8, guided
      pool_layer("p2"),     // 4x4
      conv_layer("c4", 8),  // 4x4, guided
  };
  s.attach_point = "c2";
  s.guided_layers = {"c3", "c4"};
  s.heads = {HeadSpec{"c3", {6.0f}, {1.0f}, 0}, HeadSpec{"c4", {10.0f, 14.0f}, {1.0f, 2.0f}, 0}};
  s.selective.channels = 4;
  s.supervision = sup;
  return s;
}

template <typename T>
Tensor<T> toy_image(Rng& rng, const NetworkSpec& s) {
  return random_tensor<T>(rng, 1, s.in_channels, s.in_h, s.in_w);
}

// spreads the probability map away from 0.5 so eps-perturbations never flip
// a binarized cell, and lifts biases off the relu kink
template <typename T>
void randomize_for_gradcheck(Graph<T>& g, Rng& rng) {
  g.init_params(rng);
  for (ParamRef<T>& p : g.params()) {
    if (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0)
      for (long long k = 0; k < p.value->numel(); ++k)
        p.value->data()[k] = static_cast<T>(rng.uniform(0.05, 0.3));
  }
  Tensor<T>& ow = g.module().out_w.v;
  for (long long k = 0; k < ow.numel(); ++k) ow.data()[k] = static_cast<T>(rng.normal(0.0, 1.5));
  Tensor<T>& ob = g.module().out_b.v;
  for (long long k = 0; k < ob.numel(); ++k) ob.data()[k] = static_cast<T>(rng.uniform(-0.4, 0.4));
}

}  // namespace

TEST(GraphBuild, ShapePropagationAndAnchors) {
  Graph<float> g(toy_spec());
  const auto& sh = g.shapes();
  ASSERT_EQ(sh.size(), 6u);
  EXPECT_EQ(sh[0].c, 4);
  EXPECT_EQ(sh[0].h, 16);
  EXPECT_EQ(sh[1].h, 8);
  EXPECT_EQ(sh[2].c, 6);
  EXPECT_EQ(sh[3].h, 8);
  EXPECT_EQ(sh[4].h, 4);
  EXPECT_EQ(sh[5].c, 8);
  EXPECT_EQ(sh[5].h, 4);
  EXPECT_EQ(g.attach_index(), 2);
  EXPECT_EQ(g.attach_stride(), 2);
  // head anchors: 8*8*1 + 4*4*4
  EXPECT_EQ(g.total_anchors(), 64 + 64);
  EXPECT_EQ(g.pyramid_factor(3), 1);
  EXPECT_EQ(g.pyramid_factor(5), 2);
}

TEST(GraphBuild, RejectsBadSpecs) {
  {
    NetworkSpec s = toy_spec();
    s.guided_layers = {"c1"};  // precedes the attach point
    EXPECT_THROW(Graph<float>{s}, Error);
  }
  {
    NetworkSpec s = toy_spec();
    s.attach_point = "nope";
    EXPECT_THROW(Graph<float>{s}, Error);
  }
  {
    NetworkSpec s = toy_spec();
    s.guided_layers = {"p2"};  // pools carry no weights to skip
    EXPECT_THROW(Graph<float>{s}, Error);
  }
  {
    NetworkSpec s = toy_spec();
    s.gate_layers = std::vector<std::string>{"c1"};  // gate must be guided
    EXPECT_THROW(Graph<float>{s}, Error);
  }
  {
    NetworkSpec s = toy_spec();
    s.layers[2].name = "c1";  // duplicate name
    EXPECT_THROW(Graph<float>{s}, Error);
  }
}

TEST(GraphForward, FullMaskMatchesBaselineBitwise) {
  Graph<float> g(toy_spec());
  Rng rng(11);
  g.init_params(rng);  // mask branch output conv starts at zero: prob == 0.5 everywhere

  for (int trial = 0; trial < 5; ++trial) {
    Tensor<float> img = toy_image<float>(rng, g.spec());
    auto base = g.forward(img, RunMode::Baseline);
    auto inf = g.forward(img, RunMode::Inference);
    ASSERT_EQ(inf.base_mask.ones(), 8 * 8);
    for (size_t hi = 0; hi < base.heads.size(); ++hi) {
      EXPECT_TRUE(bit_identical(base.heads[hi].cls, inf.heads[hi].cls));
      EXPECT_TRUE(bit_identical(base.heads[hi].loc, inf.heads[hi].loc));
    }
    auto db = g.detections(base);
    auto di = g.detections(inf);
    ASSERT_EQ(db.size(), di.size());
    for (size_t k = 0; k < db.size(); ++k) {
      EXPECT_EQ(db[k].class_id, di[k].class_id);
      EXPECT_EQ(db[k].score, di[k].score);
      EXPECT_EQ(db[k].x1, di[k].x1);
      EXPECT_EQ(db[k].anchor_index, di[k].anchor_index);
    }
  }
}

TEST(GraphForward, AllZeroMaskYieldsNoDetections) {
  Graph<float> g(toy_spec());
  Rng rng(13);
  g.init_params(rng);
  g.module().out_b.v.data()[0] = -10.0f;  // prob ~ 4.5e-5 everywhere

  Tensor<float> img = toy_image<float>(rng, g.spec());
  auto fo = g.forward(img, RunMode::Inference);
  EXPECT_EQ(fo.base_mask.ones(), 0);
  EXPECT_EQ(fo.meter.row_products, 0);
  EXPECT_EQ(fo.meter.macs, 0);
  // guided outputs are exactly zero tensors
  for (int i : g.guided_indices())
    for (long long k = 0; k < fo.tape.act[i].numel(); ++k)
      ASSERT_EQ(fo.tape.act[i].data()[k], 0.0f);
  EXPECT_TRUE(g.detections(fo).empty());
}

TEST(GraphForward, EmptyGuidedSetBehavesAsBaseline) {
  NetworkSpec s = toy_spec();
  s.guided_layers.clear();
  Graph<float> g(s);
  Rng rng(17);
  g.init_params(rng);
  g.module().out_w.v.data()[0] = 3.0f;  // nontrivial mask, which nothing consumes

  Tensor<float> img = toy_image<float>(rng, s);
  auto base = g.forward(img, RunMode::Baseline);
  auto inf = g.forward(img, RunMode::Inference);
  for (size_t hi = 0; hi < base.heads.size(); ++hi)
    EXPECT_TRUE(bit_identical(base.heads[hi].cls, inf.heads[hi].cls));
  EXPECT_EQ(g.detections(base).size(), g.detections(inf).size());
}

TEST(GraphForward, WorkCountersMatchMaskPopulation) {
  Graph<float> g(toy_spec());
  Rng rng(19);
  g.init_params(rng);
  // random mask branch output: nontrivial, image-dependent masks
  Tensor<float>& ow = g.module().out_w.v;
  for (long long k = 0; k < ow.numel(); ++k) ow.data()[k] = static_cast<float>(rng.normal(0, 2));

  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> img = toy_image<float>(rng, g.spec());
    auto fo = g.forward(img, RunMode::Inference);
    const auto& gi = g.guided_indices();
    ASSERT_EQ(fo.guided_meters.size(), gi.size());
    for (size_t k = 0; k < gi.size(); ++k) {
      const int i = gi[k];
      const SaliencyMask& m = fo.hard_levels[0].h() == fo.tape.act[i].h()
                                  ? fo.hard_levels[0]
                                  : fo.hard_levels[1];
      ASSERT_EQ(m.h(), fo.tape.act[i].h());
      const long long rows = m.ones();
      auto ps = g.params();
      const auto it = std::find_if(ps.begin(), ps.end(), [&](const ParamRef<float>& p) {
        return p.name == g.spec().layers[i].name + ".w";
      });
      ASSERT_NE(it, ps.end());
      const Tensor<float>& w = *it->value;
      EXPECT_EQ(fo.guided_meters[k].row_products, rows);
      EXPECT_EQ(fo.guided_meters[k].macs, rows * w.numel());
    }
  }
}

TEST(GraphForward, DeterministicRepeat) {
  Graph<float> g(toy_spec());
  Rng rng(23);
  g.init_params(rng);
  Tensor<float>& ow = g.module().out_w.v;
  for (long long k = 0; k < ow.numel(); ++k) ow.data()[k] = static_cast<float>(rng.normal(0, 2));
  Tensor<float> img = toy_image<float>(rng, g.spec());
  auto a = g.forward(img, RunMode::Inference);
  auto b = g.forward(img, RunMode::Inference);
  ASSERT_TRUE(a.base_mask == b.base_mask);
  for (size_t hi = 0; hi < a.heads.size(); ++hi)
    EXPECT_TRUE(bit_identical(a.heads[hi].cls, b.heads[hi].cls));
}

TEST(GraphHeads, FlattenScatterRoundTrip) {
  Graph<float> g(toy_spec());
  Rng rng(29);
  std::vector<HeadOutput<float>> hs;
  const auto grids = g.head_grids();
  const int cp1 = g.spec().num_classes + 1;
  for (size_t hi = 0; hi < grids.size(); ++hi) {
    const int na = g.spec().heads[hi].num_anchors();
    HeadOutput<float> h;
    h.cls = random_tensor<float>(rng, 1, na * cp1, grids[hi][0], grids[hi][1]);
    h.loc = random_tensor<float>(rng, 1, na * 4, grids[hi][0], grids[hi][1]);
    hs.push_back(std::move(h));
  }
  std::vector<float> logits, loc;
  g.flatten_heads(hs, logits, loc);
  EXPECT_EQ(logits.size(), static_cast<size_t>(g.total_anchors()) * cp1);
  auto back = g.scatter_head_grads(logits, loc);
  for (size_t hi = 0; hi < hs.size(); ++hi) {
    EXPECT_TRUE(bit_identical(hs[hi].cls, back[hi].cls));
    EXPECT_TRUE(bit_identical(hs[hi].loc, back[hi].loc));
  }
}

namespace {

// detection + mask loss with gradients pushed through the whole graph
template <typename T>
double direct_loss(Graph<T>& g, const Tensor<T>& img, const std::vector<BoundingBox>& gts,
                   const SaliencyMask& gt_mask, bool with_grads) {
  auto fo = g.forward(img, RunMode::TrainDirect);
  std::vector<T> logits, loc;
  g.flatten_heads(fo.heads, logits, loc);
  MatchResult m = g.match(fo, gts);
  const int cp1 = g.spec().num_classes + 1;
  if (!with_grads) {
    auto lc = loss_cls<T>(logits, cp1, m, nullptr);
    auto ll = loss_loc<T>(loc, m, nullptr);
    const T lm = loss_mask<T>(fo.prob, gt_mask, nullptr);
    return combine_losses(lc, ll, lm).total;
  }
  std::vector<T> gl(logits.size(), T(0)), go(loc.size(), T(0));
  auto lc = loss_cls<T>(logits, cp1, m, &gl);
  auto ll = loss_loc<T>(loc, m, &go);
  ProbMap<T> gprob(fo.prob.h, fo.prob.w);
  const T lm = loss_mask<T>(fo.prob, gt_mask, &gprob);
  auto ghead = g.scatter_head_grads(gl, go);
  g.backward(img, fo, ghead, &gprob);
  return combine_losses(lc, ll, lm).total;
}

template <typename T>
double indirect_loss(Graph<T>& g, const Tensor<T>& img, const std::vector<BoundingBox>& gts,
                     const ProbMap<T>* frozen, bool with_grads) {
  auto fo = g.forward(img, RunMode::TrainIndirect, frozen);
  std::vector<T> logits, loc;
  g.flatten_heads(fo.heads, logits, loc);
  MatchResult m = g.match(fo, gts);
  const int cp1 = g.spec().num_classes + 1;
  if (!with_grads) {
    auto lc = loss_cls<T>(logits, cp1, m, nullptr);
    auto ll = loss_loc<T>(loc, m, nullptr);
    return combine_losses(lc, ll, T(0)).total;
  }
  std::vector<T> gl(logits.size(), T(0)), go(loc.size(), T(0));
  auto lc = loss_cls<T>(logits, cp1, m, &gl);
  auto ll = loss_loc<T>(loc, m, &go);
  auto ghead = g.scatter_head_grads(gl, go);
  g.backward(img, fo, ghead, nullptr);
  return combine_losses(lc, ll, T(0)).total;
}

template <typename T>
void check_param_grads(Graph<T>& g, const std::vector<std::string>& names,
                       const std::function<double()>& loss, double tol, int stride) {
  for (const std::string& name : names) {
    bool found = false;
    for (ParamRef<T>& p : g.params()) {
      if (p.name != name) continue;
      found = true;
      auto rep = finite_diff_check(loss, p.value->data(), p.grad->data(),
                                   static_cast<int>(p.value->numel()), 1e-5, 1e-3, stride);
      EXPECT_LT(rep.max_rel_err, tol) << name << ": " << rep.str();
    }
    ASSERT_TRUE(found) << "no parameter named " << name;
  }
}

}  // namespace

TEST(GraphGrad, DirectModeFiniteDifference) {
  Graph<double> g(toy_spec());
  Rng rng(31);
  randomize_for_gradcheck(g, rng);

  Tensor<double> img = toy_image<double>(rng, g.spec());
  std::vector<BoundingBox> gts{{2, 2, 11, 11, 0}, {9, 10, 15, 15, 1}};
  SaliencyMask gt_mask = g.gt_base_mask(gts);

  auto probe = g.forward(img, RunMode::TrainDirect);
  // the mask must sit safely off the binarization threshold for central differences
  for (const double& p : probe.prob.v) ASSERT_GT(std::abs(p - 0.5), 1e-3);
  MatchResult m = g.match(probe, gts);
  ASSERT_GE(m.num_positive, 1);

  g.zero_grads();
  direct_loss(g, img, gts, gt_mask, true);
  auto loss = [&]() { return direct_loss(g, img, gts, gt_mask, false); };
  check_param_grads(g, {"c1.w", "c2.w", "c3.w", "c4.b", "mask.in_w", "head.c4.cls_w"}, loss,
                    1e-4, 7);
}

TEST(GraphGrad, DirectModeModuleUntouchedWithoutMaskLoss) {
  Graph<double> g(toy_spec());
  Rng rng(37);
  randomize_for_gradcheck(g, rng);
  Tensor<double> img = toy_image<double>(rng, g.spec());
  std::vector<BoundingBox> gts{{2, 2, 11, 11, 0}};

  auto fo = g.forward(img, RunMode::TrainDirect);
  std::vector<double> logits, loc;
  g.flatten_heads(fo.heads, logits, loc);
  MatchResult m = g.match(fo, gts);
  std::vector<double> gl(logits.size(), 0.0), go(loc.size(), 0.0);
  loss_cls<double>(logits, g.spec().num_classes + 1, m, &gl);
  loss_loc<double>(loc, m, &go);
  g.zero_grads();
  g.backward(img, fo, g.scatter_head_grads(gl, go), nullptr);

  // hard masks block every detection-loss path into the mask branch
  for (ParamRef<double>& p : g.params()) {
    if (p.name.rfind("mask.", 0) != 0) continue;
    for (long long k = 0; k < p.grad->numel(); ++k) ASSERT_EQ(p.grad->data()[k], 0.0) << p.name;
  }
  // while the trunk still learns
  double trunk_norm = 0;
  for (ParamRef<double>& p : g.params())
    if (p.name == "c3.w")
      for (long long k = 0; k < p.grad->numel(); ++k)
        trunk_norm += p.grad->data()[k] * p.grad->data()[k];
  EXPECT_GT(trunk_norm, 0.0);
}

TEST(GraphGrad, IndirectEmptyGateSeversModuleGradient) {
  NetworkSpec s = toy_spec(Supervision::Indirect);
  s.gate_layers = std::vector<std::string>{};  // explicit empty set
  Graph<double> g(s);
  Rng rng(41);
  randomize_for_gradcheck(g, rng);
  Tensor<double> img = toy_image<double>(rng, s);
  std::vector<BoundingBox> gts{{2, 2, 11, 11, 0}};

  g.zero_grads();
  indirect_loss(g, img, gts, static_cast<const ProbMap<double>*>(nullptr), true);
  double module_norm = 0, trunk_norm = 0;
  for (ParamRef<double>& p : g.params()) {
    double n = 0;
    for (long long k = 0; k < p.grad->numel(); ++k) n += p.grad->data()[k] * p.grad->data()[k];
    if (p.name.rfind("mask.", 0) == 0)
      module_norm += n;
    else
      trunk_norm += n;
  }
  EXPECT_EQ(module_norm, 0.0);
  EXPECT_GT(trunk_norm, 0.0);
}

TEST(GraphGrad, IndirectGatedFiniteDifference) {
  NetworkSpec s = toy_spec(Supervision::Indirect);
  s.gate_layers = std::vector<std::string>{"c4"};
  s.pyramid_trainable = true;
  Graph<double> g(s);
  Rng rng(43);
  randomize_for_gradcheck(g, rng);
  Tensor<double> img = toy_image<double>(rng, s);
  std::vector<BoundingBox> gts{{2, 2, 11, 11, 0}, {9, 10, 15, 15, 1}};

  auto ref = g.forward(img, RunMode::TrainIndirect);
  ProbMap<double> frozen = ref.prob;

  g.zero_grads();
  indirect_loss(g, img, gts, static_cast<const ProbMap<double>*>(nullptr), true);  // analytic grads, gate applied in backward
  // the gated loss freezes the map at every non-gated layer, so finite
  // differences see exactly the paths the gate lets through
  auto loss = [&]() { return indirect_loss(g, img, gts, &frozen, false); };
  check_param_grads(g, {"mask.out_w", "mask.in_w", "c1.w", "c3.w", "c4.w", "pyr.f2.w"}, loss,
                    1e-4, 3);

  double module_norm = 0;
  for (ParamRef<double>& p : g.params())
    if (p.name.rfind("mask.", 0) == 0)
      for (long long k = 0; k < p.grad->numel(); ++k)
        module_norm += p.grad->data()[k] * p.grad->data()[k];
  EXPECT_GT(module_norm, 0.0);
}
