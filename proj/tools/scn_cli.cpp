// Command line front end over the library: cost reports, the oracle suites,
// dataset generation, training and single-image inference.
//
// Exit codes: 0 ok, 1 contract violation, 2 usage or schema error.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scn/data.hpp"
#include "scn/flops.hpp"
#include "scn/gradcheck.hpp"
#include "scn/graph.hpp"
#include "scn/io.hpp"
#include "scn/train.hpp"

namespace {

using namespace scn;

template <typename T>
Tensor<T> uniform_tensor(Rng& rng, int n, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(n, c, h, w);
  for (long long i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

SaliencyMask bernoulli_mask(Rng& rng, int h, int w, double density) {
  SaliencyMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (rng.uniform() < density) m.set(y, x, 1);
  return m;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0;
  for (long long i = 0; i < a.numel(); ++i)
    s += static_cast<double>(a.data()[i]) * static_cast<double>(b.data()[i]);
  return s;
}

FlopsConvention parse_convention(const std::string& s) {
  return s == "2macs" ? FlopsConvention::TwoMacs : FlopsConvention::Macs;
}

// ---- count-flops ----

int cmd_count_flops(const std::string& spec_path, const std::string& convention,
                    const std::string& out_csv) {
  const NetworkSpec spec = load_spec(spec_path);
  Graph<float> g(spec);
  // Analytic report: every mask at full density, so totals are the dense cost.
  const FlopsReport rep = flops_report(g);
  const FlopsConvention conv = parse_convention(convention);
  std::fputs(format_report(rep, conv).c_str(), stdout);
  if (!out_csv.empty()) {
    std::ofstream os(out_csv, std::ios::binary);
    SCN_CHECK(os.good(), "count-flops: cannot write '", out_csv, "'");
    os << report_csv(rep, conv);
  }
  return 0;
}

// ---- check-equiv ----

// Randomized masked-vs-dense trials. Selected cells must be bit-identical to
// the dense conv, masked-out cells exactly zero; any drift is a hard failure.
int cmd_check_equiv(uint64_t seed, int trials) {
  SCN_CHECK(trials > 0, "check-equiv: trials must be positive");
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    int n, ci, co, h, w, k, s, pd, dl;
    for (;;) {
      n = 1 + rng.below(2);
      ci = 1 + rng.below(8);
      co = 1 + rng.below(8);
      h = 3 + rng.below(14);
      w = 3 + rng.below(14);
      k = 1 + rng.below(3);
      s = 1 + rng.below(2);
      pd = rng.below(2);
      dl = 1 + rng.below(2);
      const int eff = dl * (k - 1) + 1;  // dilated kernel extent
      if (h + 2 * pd >= eff && w + 2 * pd >= eff) break;
    }
    const ConvParams p{k, k, s, s, pd, pd, dl, dl};
    Tensor<float> x = uniform_tensor<float>(rng, n, ci, h, w);
    Tensor<float> wt = uniform_tensor<float>(rng, co, ci, k, k);
    Tensor<float> b = uniform_tensor<float>(rng, 1, co, 1, 1);
    auto [oh, ow] = conv_out_dims(h, w, p);
    SaliencyMask mask = bernoulli_mask(rng, oh, ow, rng.uniform(0.0, 1.0));
    Tensor<float> dense = conv2d_dense(x, wt, b, p);
    Tensor<float> masked = masked_conv2d(x, wt, b, mask, p);
    for (int bn = 0; bn < n; ++bn)
      for (int oc = 0; oc < co; ++oc)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) {
            const float got = masked.at(bn, oc, y, xx);
            const float want = mask.bit(y, xx) ? dense.at(bn, oc, y, xx) : 0.0f;
            if (std::memcmp(&got, &want, sizeof(float)) != 0)
              fail("check-equiv: trial ", t, " diverged at (", bn, ",", oc, ",", y, ",", xx,
                   "): masked ", got, " vs expected ", want);
          }
  }
  std::printf("%d/%d exact\n", trials, trials);
  return 0;
}

// ---- gradcheck ----

struct SuiteResult {
  std::string name;
  double max_rel_err = 0;
  long long checked = 0;
};

void fold(SuiteResult& s, const GradCheckReport& r) {
  s.max_rel_err = std::max(s.max_rel_err, r.max_rel_err);
  s.checked += r.checked;
}

SuiteResult suite_masked_conv(Rng& rng) {
  SuiteResult s{"masked_conv2d", 0, 0};
  const ConvParams p = ConvParams::square(3, 1, 1);
  Tensor<double> x = uniform_tensor<double>(rng, 1, 2, 6, 5);
  Tensor<double> w = uniform_tensor<double>(rng, 3, 2, 3, 3);
  Tensor<double> b = uniform_tensor<double>(rng, 1, 3, 1, 1);
  SaliencyMask mask = bernoulli_mask(rng, 6, 5, 0.5);
  Tensor<double> r = uniform_tensor<double>(rng, 1, 3, 6, 5);
  auto loss = [&]() { return dot(masked_conv2d(x, w, b, mask, p), r); };
  Tensor<double> gx(1, 2, 6, 5), gw(3, 2, 3, 3), gb(1, 3, 1, 1);
  masked_conv2d_bwd(r, x, w, mask, p, &gx, &gw, &gb);
  fold(s, finite_diff_check(loss, x.data(), gx.data(), x.numel()));
  fold(s, finite_diff_check(loss, w.data(), gw.data(), w.numel()));
  fold(s, finite_diff_check(loss, b.data(), gb.data(), b.numel()));
  return s;
}

SuiteResult suite_soft_mask(Rng& rng) {
  SuiteResult s{"soft_mask_apply", 0, 0};
  Tensor<double> x = uniform_tensor<double>(rng, 2, 3, 4, 5);
  ProbMap<double> p(4, 5);
  for (auto& v : p.v) v = rng.uniform(0.0, 1.0);
  Tensor<double> r = uniform_tensor<double>(rng, 2, 3, 4, 5);
  auto loss = [&]() { return dot(soft_mask_apply(x, p), r); };
  Tensor<double> gx(2, 3, 4, 5);
  ProbMap<double> gp(4, 5);
  soft_mask_apply_bwd(r, x, p, gx, &gp);
  fold(s, finite_diff_check(loss, x.data(), gx.data(), x.numel()));
  fold(s, finite_diff_check(loss, p.v.data(), gp.v.data(), p.numel()));
  return s;
}

SuiteResult suite_nonlocal(Rng& rng) {
  SuiteResult s{"nonlocal_block", 0, 0};
  NonLocalParams<double> p;
  p.build(4);
  p.init(rng);
  // wz starts at zero by design; give it signal or its upstream grads vanish
  for (long long i = 0; i < p.wz.v.numel(); ++i) p.wz.v.data()[i] = rng.uniform(-0.5, 0.5);
  Tensor<double> x = uniform_tensor<double>(rng, 1, 4, 3, 4);
  Tensor<double> r = uniform_tensor<double>(rng, 1, 4, 3, 4);
  auto loss = [&]() {
    return dot(nonlocal_forward(x, p, static_cast<NonLocalTape<double>*>(nullptr)), r);
  };
  NonLocalTape<double> tape;
  nonlocal_forward(x, p, &tape);
  Tensor<double> gx = nonlocal_backward(r, x, p, tape);
  fold(s, finite_diff_check(loss, x.data(), gx.data(), x.numel()));
  for (Param<double>* w : {&p.wt, &p.wf, &p.wg, &p.wz})
    fold(s, finite_diff_check(loss, w->v.data(), w->g.data(), w->v.numel()));
  return s;
}

SuiteResult suite_loss_mask(Rng& rng) {
  SuiteResult s{"loss_mask", 0, 0};
  ProbMap<double> p(3, 4);
  for (auto& v : p.v) v = rng.uniform(0.05, 0.95);
  SaliencyMask gt = bernoulli_mask(rng, 3, 4, 0.5);
  ProbMap<double> g(3, 4);
  loss_mask<double>(p, gt, &g);
  auto loss = [&]() { return loss_mask<double>(p, gt, nullptr); };
  fold(s, finite_diff_check(loss, p.v.data(), g.v.data(), p.numel()));
  return s;
}

SuiteResult suite_loss_cls(Rng& rng) {
  SuiteResult s{"loss_cls", 0, 0};
  MatchResult m;
  const int n = 6, cp1 = 4;
  for (int i = 0; i < n; ++i) {
    m.target_class.push_back(i % cp1);
    m.target_offset.push_back({0, 0, 0, 0});
    m.positive.push_back(m.target_class.back() > 0);
    m.ignored.push_back(i == 4);
  }
  m.num_positive = 4;
  m.num_considered = 5;
  std::vector<double> logits(n * cp1);
  for (auto& v : logits) v = rng.uniform(-2, 2);
  std::vector<double> g(n * cp1, 0.0);
  loss_cls<double>(logits, cp1, m, &g);
  auto loss = [&]() { return loss_cls<double>(logits, cp1, m, nullptr).value; };
  fold(s, finite_diff_check(loss, logits.data(), g.data(), n * cp1));
  return s;
}

SuiteResult suite_loss_loc(Rng& rng) {
  SuiteResult s{"loss_loc", 0, 0};
  MatchResult m;
  const int n = 5;
  for (int i = 0; i < n; ++i) {
    m.target_class.push_back(1);
    m.target_offset.push_back({static_cast<float>(rng.uniform(-1, 1)), 0.5f, -0.25f, 0.0f});
    m.positive.push_back(i != 2);
    m.ignored.push_back(i == 4);
  }
  m.num_positive = 3;
  m.num_considered = 4;
  std::vector<double> loc(n * 4);
  for (auto& v : loc) v = rng.uniform(-2.5, 2.5);
  std::vector<double> g(n * 4, 0.0);
  loss_loc<double>(loc, m, &g);
  auto loss = [&]() { return loss_loc<double>(loc, m, nullptr).value; };
  fold(s, finite_diff_check(loss, loc.data(), g.data(), n * 4));
  return s;
}

// Central finite differences against every analytic backward path, double
// precision. Prints one line per path and fails if any exceeds 1e-4 relative.
int cmd_gradcheck(uint64_t seed) {
  const double tol = 1e-4;
  Rng rng(seed);
  std::vector<SuiteResult> suites;
  suites.push_back(suite_masked_conv(rng));
  suites.push_back(suite_soft_mask(rng));
  suites.push_back(suite_nonlocal(rng));
  suites.push_back(suite_loss_mask(rng));
  suites.push_back(suite_loss_cls(rng));
  suites.push_back(suite_loss_loc(rng));
  const SuiteResult* worst = nullptr;
  for (const SuiteResult& s : suites) {
    std::printf("%-16s max rel err %.3e over %lld coords\n", s.name.c_str(), s.max_rel_err,
                s.checked);
    if (!worst || s.max_rel_err > worst->max_rel_err) worst = &s;
  }
  if (worst && worst->max_rel_err >= tol)
    fail("gradcheck: ", worst->name, " rel err ", worst->max_rel_err, " exceeds ", tol);
  std::printf("all %zu backward paths within %.0e\n", suites.size(), tol);
  return 0;
}

// ---- gen-data / train / infer ----

int cmd_gen_data(const std::string& out_dir, int n, uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  save_dataset(out_dir, make_dataset<float>(n, seed));
  std::printf("wrote %d samples to %s\n", n, out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& spec_path, const std::string& data_dir,
              const std::string& strategy, int epochs, uint64_t seed,
              const std::string& weights_out, const std::string& metrics_out) {
  NetworkSpec spec = load_spec(spec_path);
  if (strategy == "direct") spec.supervision = Supervision::Direct;
  if (strategy == "indirect") spec.supervision = Supervision::Indirect;
  Graph<float> g(spec);
  Rng rng(seed);
  g.init_params(rng);
  const std::vector<SyntheticScene<float>> data = load_dataset<float>(data_dir);
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  Trainer<float> tr(g, cfg);
  const std::vector<EpochStats> hist = tr.fit(data);
  for (const EpochStats& st : hist)
    std::printf("epoch %d: L=%.4f Lc=%.4f Ll=%.4f Lm=%.4f density=%.3f reduction=%.1f%%\n",
                st.epoch, st.total, st.cls, st.loc, st.mask, st.mask_density,
                st.flops_reduction);
  if (!weights_out.empty()) save_weights(weights_out, g);
  if (!metrics_out.empty()) {
    std::ofstream os(metrics_out, std::ios::binary);
    SCN_CHECK(os.good(), "train: cannot write '", metrics_out, "'");
    os << metrics_csv(hist);
  }
  return 0;
}

int cmd_infer(const std::string& spec_path, const std::string& weights_path,
              const std::string& image_path, const std::string& out_dir) {
  const NetworkSpec spec = load_spec(spec_path);
  Graph<float> g(spec);
  load_weights(weights_path, g);
  const Tensor<float> img = read_ppm<float>(image_path);
  const RunMode mode = g.attach_index() >= 0 ? RunMode::Inference : RunMode::Baseline;
  const ForwardOut<float> fo = g.forward(img, mode);
  for (const Detection& d : g.detections(fo))
    std::printf("%d %.4f %.2f %.2f %.2f %.2f\n", d.class_id, d.score, d.x1, d.y1, d.x2, d.y2);
  if (!out_dir.empty() && mode == RunMode::Inference) {
    std::filesystem::create_directories(out_dir);
    write_pgm(fo.base_mask, out_dir + "/mask_base.pgm");
    for (const SaliencyMask& lv : fo.hard_levels) {
      // level factor recovered from the grid ratio; dims shrink by ceil(/f)
      const int f = static_cast<int>(
          std::lround(static_cast<double>(fo.base_mask.h()) / lv.h()));
      write_pgm(lv, out_dir + "/mask_x" + std::to_string(f) + ".pgm");
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective convolution network tool", "scn"};
  app.require_subcommand(1);

  std::string spec_path, weights_path, data_path, out_path, strategy;
  std::string convention = "macs";
  uint64_t seed = 1;
  int epochs = scn::TrainConfig{}.epochs;
  int trials = 100;
  int samples = 16;

  CLI::App* fl = app.add_subcommand("count-flops", "analytic cost report for a network spec");
  fl->add_option("--spec", spec_path, "network spec JSON")->required();
  fl->add_option("--convention", convention, "flops convention")
      ->check(CLI::IsMember({"macs", "2macs"}));
  fl->add_option("--out", out_path, "also write the report as CSV here");

  CLI::App* eq = app.add_subcommand("check-equiv", "randomized masked vs dense conv trials");
  eq->add_option("--seed", seed, "rng seed");
  eq->add_option("--trials", trials, "trial count");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite difference audit of backward paths");
  gc->add_option("--seed", seed, "rng seed");

  CLI::App* gd = app.add_subcommand("gen-data", "write a synthetic shapes dataset");
  gd->add_option("--out", out_path, "output directory")->required();
  gd->add_option("--n", samples, "sample count");
  gd->add_option("--seed", seed, "rng seed");

  CLI::App* tr = app.add_subcommand("train", "fit a spec on a dataset");
  tr->add_option("--spec", spec_path, "network spec JSON")->required();
  tr->add_option("--data", data_path, "dataset directory")->required();
  tr->add_option("--strategy", strategy, "supervision override")
      ->check(CLI::IsMember({"direct", "indirect"}));
  tr->add_option("--epochs", epochs, "training epochs");
  tr->add_option("--seed", seed, "rng seed");
  tr->add_option("--weights", weights_path, "save trained weights here");
  tr->add_option("--out", out_path, "write per-epoch metrics CSV here");

  CLI::App* in = app.add_subcommand("infer", "detect on one image, optionally export masks");
  in->add_option("--spec", spec_path, "network spec JSON")->required();
  in->add_option("--weights", weights_path, "weights file")->required();
  in->add_option("--data", data_path, "input image (PPM)")->required();
  in->add_option("--out", out_path, "directory for mask PGM export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help exits clean, bad usage is 2
  }

  try {
    if (fl->parsed()) return cmd_count_flops(spec_path, convention, out_path);
    if (eq->parsed()) return cmd_check_equiv(seed, trials);
    if (gc->parsed()) return cmd_gradcheck(seed);
    if (gd->parsed()) return cmd_gen_data(out_path, samples, seed);
    if (tr->parsed()) return cmd_train(spec_path, data_path, strategy, epochs, seed,
                                       weights_path, out_path);
    if (in->parsed()) return cmd_infer(spec_path, weights_path, data_path, out_path);
  } catch (const scn::SchemaError& e) {
    std::fprintf(stderr, "scn: %s\n", e.what());
    return 2;
  } catch (const scn::Error& e) {
    std::fprintf(stderr, "scn: %s\n", e.what());
    return 1;
  }
  return 0;
}
