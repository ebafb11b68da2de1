#include "scn/selective.hpp"

#include <gtest/gtest.h>

#include "scn/gradcheck.hpp"
#include "test_util.hpp"

using namespace scn;
using namespace scn::testutil;

TEST(DepthwiseConv, ChannelsStayIndependent) {
  Rng rng(97);
  Tensor<float> x = random_tensor<float>(rng, 1, 3, 6, 6);
  Tensor<float> w(3, 1, 3, 3);
  // kernel 0 is identity, kernel 1 is zero, kernel 2 sums the window
  w.at(0, 0, 1, 1) = 1.0f;
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx) w.at(2, 0, ky, kx) = 1.0f;
  Tensor<float> none;
  Tensor<float> y = depthwise_conv2d(x, w, none, ConvParams::square(3, 1, 1));
  ASSERT_TRUE(y.same_shape(x));
  EXPECT_FLOAT_EQ(y.at(0, 0, 2, 3), x.at(0, 0, 2, 3));
  EXPECT_EQ(y.at(0, 1, 2, 3), 0.0f);
  float sum = 0;
  for (int ky = 1; ky <= 3; ++ky)
    for (int kx = 2; kx <= 4; ++kx) sum += x.at(0, 2, ky, kx);
  EXPECT_FLOAT_EQ(y.at(0, 2, 2, 3), sum);
}

TEST(DepthwiseConvGrad, FiniteDifference) {
  Rng rng(101);
  ConvParams p{3, 3, 2, 2, 1, 1, 1, 1};
  Tensor<double> x = random_tensor<double>(rng, 1, 2, 6, 6);
  Tensor<double> w = random_tensor<double>(rng, 2, 1, 3, 3);
  Tensor<double> b = random_tensor<double>(rng, 1, 2, 1, 1);
  Tensor<double> r = random_tensor<double>(rng, 1, 2, 3, 3);

  auto loss = [&]() { return dot(depthwise_conv2d(x, w, b, p), r); };

  Tensor<double> gx(1, 2, 6, 6), gw(2, 1, 3, 3), gb(1, 2, 1, 1);
  depthwise_conv2d_bwd(r, x, w, p, &gx, &gw, &gb);

  auto rep = finite_diff_check(loss, x.data(), gx.data(), x.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "data: " << rep.str();
  rep = finite_diff_check(loss, w.data(), gw.data(), w.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "weight: " << rep.str();
  rep = finite_diff_check(loss, b.data(), gb.data(), b.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "bias: " << rep.str();
}

TEST(NonLocal, ZeroResidualWeightIsIdentity) {
  Rng rng(103);
  NonLocalParams<float> p;
  p.build(6);
  p.init(rng);  // wz starts at zero
  Tensor<float> x = random_tensor<float>(rng, 1, 6, 4, 4);
  Tensor<float> y = nonlocal_forward(x, p, static_cast<NonLocalTape<float>*>(nullptr));
  EXPECT_TRUE(bit_identical(x, y));
}

TEST(NonLocal, AttentionRowsAreNormalised) {
  Rng rng(107);
  NonLocalParams<double> p;
  p.build(4);
  p.init(rng);
  Tensor<double> x = random_tensor<double>(rng, 1, 4, 3, 3);
  NonLocalTape<double> tape;
  nonlocal_forward(x, p, &tape);
  for (int i = 0; i < tape.hw; ++i) {
    double s = 0;
    for (int j = 0; j < tape.hw; ++j) s += tape.a[static_cast<size_t>(i) * tape.hw + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(NonLocal, SoftmaxStableUnderLargeActivations) {
  Rng rng(109);
  NonLocalParams<float> p;
  p.build(4);
  p.init(rng);
  for (long long i = 0; i < p.wz.v.numel(); ++i) p.wz.v.data()[i] = 0.1f;
  Tensor<float> x = random_tensor<float>(rng, 1, 4, 3, 3, 50.0, 60.0);  // huge dot products
  Tensor<float> y = nonlocal_forward(x, p, static_cast<NonLocalTape<float>*>(nullptr));
  EXPECT_TRUE(y.all_finite());
}

TEST(NonLocalGrad, FiniteDifferenceAllParams) {
  Rng rng(113);
  NonLocalParams<double> p;
  p.build(4);
  p.init(rng);
  // wz must be nonzero or its upstream grads vanish trivially
  for (long long i = 0; i < p.wz.v.numel(); ++i) p.wz.v.data()[i] = rng.uniform(-0.5, 0.5);
  Tensor<double> x = random_tensor<double>(rng, 1, 4, 3, 4);
  Tensor<double> r = random_tensor<double>(rng, 1, 4, 3, 4);

  auto loss = [&]() {
    return dot(nonlocal_forward(x, p, static_cast<NonLocalTape<double>*>(nullptr)), r);
  };

  NonLocalTape<double> tape;
  nonlocal_forward(x, p, &tape);
  Tensor<double> gx = nonlocal_backward(r, x, p, tape);

  auto rep = finite_diff_check(loss, x.data(), gx.data(), x.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "x: " << rep.str();
  rep = finite_diff_check(loss, p.wt.v.data(), p.wt.g.data(), p.wt.v.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "theta: " << rep.str();
  rep = finite_diff_check(loss, p.wf.v.data(), p.wf.g.data(), p.wf.v.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "phi: " << rep.str();
  rep = finite_diff_check(loss, p.wg.v.data(), p.wg.g.data(), p.wg.v.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "g: " << rep.str();
  rep = finite_diff_check(loss, p.wz.v.data(), p.wz.g.data(), p.wz.v.numel());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "z: " << rep.str();
}

namespace {

SelectiveModuleConfig full_config(int channels) {
  SelectiveModuleConfig c;
  c.channels = channels;
  return c;
}

template <typename T>
std::vector<ParamRef<T>> params_of(SelectiveModule<T>& m) {
  std::vector<ParamRef<T>> out;
  m.collect_params("m.", out);
  return out;
}

}  // namespace

TEST(SelectiveModule, FreshModuleEmitsHalfEverywhere) {
  Rng rng(127);
  SelectiveModule<float> m;
  m.build(5, full_config(4));
  m.init_params(rng);
  Tensor<float> x = random_tensor<float>(rng, 1, 5, 8, 8);
  ProbMap<float> prob = m.forward(x, static_cast<SelectiveTape<float>*>(nullptr));
  ASSERT_EQ(prob.h, 8);
  ASSERT_EQ(prob.w, 8);
  for (auto v : prob.v) EXPECT_EQ(v, 0.5f);
  // the inclusive threshold turns that into an all-ones mask
  EXPECT_EQ(binarize(prob, 0.5f).ones(), 64);
}

TEST(SelectiveModule, RejectsOddResolution) {
  Rng rng(131);
  SelectiveModule<float> m;
  m.build(3, full_config(4));
  m.init_params(rng);
  Tensor<float> x = random_tensor<float>(rng, 1, 3, 7, 8);
  EXPECT_THROW(m.forward(x, static_cast<SelectiveTape<float>*>(nullptr)), Error);
}

TEST(SelectiveModule, ProbabilitiesStayInUnitInterval) {
  Rng rng(137);
  SelectiveModule<float> m;
  m.build(4, full_config(6));
  m.init_params(rng);
  // push the output conv away from zero so probs spread out
  for (long long i = 0; i < m.out_w.v.numel(); ++i) m.out_w.v.data()[i] = 2.0f;
  m.out_b.v.data()[0] = -1.0f;
  Tensor<float> x = random_tensor<float>(rng, 1, 4, 10, 10, -3.0, 3.0);
  ProbMap<float> prob = m.forward(x, static_cast<SelectiveTape<float>*>(nullptr));
  for (auto v : prob.v) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(SelectiveModule, AblationFlagsChangeParameterSet) {
  SelectiveModuleConfig base = full_config(4);
  SelectiveModule<float> full, lean, sep;
  full.build(3, base);

  SelectiveModuleConfig off = base;
  off.use_dilated = false;
  off.use_nonlocal = false;
  off.use_skip = false;
  off.use_deconv_upsample = false;
  lean.build(3, off);

  SelectiveModuleConfig dws = base;
  dws.use_depthwise_separable = true;
  sep.build(3, dws);

  auto names = [](std::vector<ParamRef<float>> ps) {
    std::vector<std::string> ns;
    for (auto& p : ps) ns.push_back(p.name);
    return ns;
  };
  auto fn = names(params_of(full)), ln = names(params_of(lean)), sn = names(params_of(sep));
  EXPECT_GT(fn.size(), ln.size());
  EXPECT_NE(std::find(fn.begin(), fn.end(), "m.nl_theta_w"), fn.end());
  EXPECT_EQ(std::find(ln.begin(), ln.end(), "m.nl_theta_w"), ln.end());
  EXPECT_EQ(std::find(ln.begin(), ln.end(), "m.up_w"), ln.end());
  EXPECT_NE(std::find(sn.begin(), sn.end(), "m.in_dw_w"), sn.end());
  EXPECT_EQ(std::find(sn.begin(), sn.end(), "m.in_w"), sn.end());
}

// Shared FD harness: checks every parameter tensor and the input gradient of
// one module configuration against central differences.
static void check_module_grads(const SelectiveModuleConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  SelectiveModule<double> m;
  m.build(3, cfg);
  m.init_params(rng);
  // Give zero-initialised tensors signal so their gradients are exercised,
  // and push every bias off zero: a zero bias can park a pre-activation
  // exactly on the relu kink (e.g. a dead encoder column under the disjoint
  // 2x2/stride-2 deconv), where central differences are undefined.
  for (long long i = 0; i < m.out_w.v.numel(); ++i) m.out_w.v.data()[i] = rng.uniform(-1, 1);
  m.out_b.v.data()[0] = 0.3;
  if (cfg.use_nonlocal)
    for (long long i = 0; i < m.nl.wz.v.numel(); ++i) m.nl.wz.v.data()[i] = rng.uniform(-0.5, 0.5);
  for (Param<double>* b : {&m.in_b, &m.dil_b, &m.enc_b, &m.up_b, &m.skip_b})
    for (long long i = 0; i < b->v.numel(); ++i) b->v.data()[i] = rng.uniform(0.05, 0.4);

  Tensor<double> x = random_tensor<double>(rng, 1, 3, 6, 6);
  ProbMap<double> r(6, 6);
  for (auto& v : r.v) v = rng.uniform(-1, 1);

  auto loss = [&]() {
    ProbMap<double> pr = m.forward(x, static_cast<SelectiveTape<double>*>(nullptr));
    double s = 0;
    for (long long i = 0; i < pr.numel(); ++i) s += pr.v[i] * r.v[i];
    return s;
  };

  SelectiveTape<double> tape;
  m.forward(x, &tape);
  Tensor<double> gx = m.backward(r, tape);

  auto rep = finite_diff_check(loss, x.data(), gx.data(), x.numel());
  EXPECT_LT(rep.max_rel_err, 2e-4) << "input: " << rep.str();
  for (auto& p : params_of(m)) {
    rep = finite_diff_check(loss, p.value->data(), p.grad->data(), p.value->numel());
    EXPECT_LT(rep.max_rel_err, 2e-4) << p.name << ": " << rep.str();
  }
}

TEST(SelectiveModuleGrad, FullConfiguration) { check_module_grads(full_config(4), 139); }

TEST(SelectiveModuleGrad, BilinearNoSkipNoContext) {
  SelectiveModuleConfig c = full_config(4);
  c.use_dilated = false;
  c.use_nonlocal = false;
  c.use_skip = false;
  c.use_deconv_upsample = false;
  check_module_grads(c, 149);
}

TEST(SelectiveModuleGrad, DepthwiseSeparable) {
  SelectiveModuleConfig c = full_config(4);
  c.use_depthwise_separable = true;
  c.use_nonlocal = false;
  check_module_grads(c, 151);
}
