#pragma once
// Arithmetic-work accounting. Counts are exact integer MACs derived from
// layer shapes; the masked column scales guided layers by mask population,
// which is exactly the fraction of im2col rows the sparse path multiplies.
// Elementwise work (relu, sigmoid, pooling compares, mask products) is not
// counted: it is identical between the dense and guided graphs and vanishes
// against the conv terms.

#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scn/graph.hpp"

namespace scn {

// FLOPs = MACs or FLOPs = 2*MACs; sources rarely say which they use, so both
// are first-class and every report states the one it was asked for.
enum class FlopsConvention { Macs, TwoMacs };

inline const char* convention_name(FlopsConvention c) {
  return c == FlopsConvention::Macs ? "macs" : "2macs";
}

inline long long apply_convention(long long macs, FlopsConvention c) {
  return c == FlopsConvention::TwoMacs ? 2 * macs : macs;
}

struct LayerCost {
  std::string name;
  long long dense_macs = 0;
  long long masked_macs = 0;  // == dense for unguided layers
  bool guided = false;
  double density = 1.0;  // mask ones / grid cells at this layer's output
};

struct FlopsReport {
  std::vector<LayerCost> layers;
  long long dense_total = 0;
  long long masked_total = 0;
  long long overhead_macs = 0;  // mask branch + pyramid, always dense

  long long reduced_absolute() const { return dense_total - masked_total; }
  double reduced_percent() const {
    return dense_total == 0 ? 0.0 : 100.0 * (1.0 - double(masked_total) / double(dense_total));
  }
  // the same ratio with the mask-branch cost charged to the guided graph
  double reduced_percent_with_overhead() const {
    return dense_total == 0
               ? 0.0
               : 100.0 * (1.0 - double(masked_total + overhead_macs) / double(dense_total));
  }
  // reduction over guided layers alone, ignoring the shared dense trunk
  double guided_reduced_percent() const {
    long long gd = 0, gm = 0;
    for (const LayerCost& l : layers)
      if (l.guided) {
        gd += l.dense_macs;
        gm += l.masked_macs;
      }
    return gd == 0 ? 0.0 : 100.0 * (1.0 - double(gm) / double(gd));
  }
};

namespace detail {

inline long long conv_macs(long long out_c, long long in_c, long long kh, long long kw,
                           long long oh, long long ow) {
  return out_c * in_c * kh * kw * oh * ow;
}

}  // namespace detail

// Mask-branch cost at a given attach shape. Every stage is counted dense:
// the branch itself never runs sparse.
inline long long selective_module_macs(const SelectiveModuleConfig& cfg, int in_c, int h, int w) {
  const long long mc = cfg.channels;
  const long long hw = static_cast<long long>(h) * w;
  const long long eh = h / 2, ew = w / 2;
  long long macs = 0;
  auto conv3x3 = [&](long long ic, long long oc, long long cells) {
    if (cfg.use_depthwise_separable)
      return ic * 9 * cells + ic * oc * cells;  // depthwise then pointwise
    return ic * oc * 9 * cells;
  };
  macs += conv3x3(in_c, mc, hw);                       // entry conv
  if (cfg.use_dilated) macs += conv3x3(mc, mc, hw);    // context conv, same grid
  if (cfg.use_nonlocal) {
    const long long ce = std::max<long long>(1, mc / 2);
    macs += 3 * mc * ce * hw;      // theta, phi, g projections (1x1)
    macs += 2 * hw * hw * ce;      // S = theta^T phi and g A^T
    macs += hw * hw * mc;          // attention-weighted aggregation
    macs += ce * mc * hw;          // output projection back to mc
  }
  macs += conv3x3(mc, mc, eh * ew);  // stride-2 encoder conv
  if (cfg.use_deconv_upsample)
    macs += mc * mc * 4 * (eh * ew);  // k2s2 deconv: one tap set per input cell
  else
    macs += 4 * mc * hw;  // bilinear: 4 taps per output cell, per channel
  if (cfg.use_skip) macs += mc * mc * hw;  // 1x1 projection of the pre-encoder map
  macs += mc * hw;                         // 1x1 scoring conv
  return macs;
}

// Pyramid downsampling cost: one f*f dot product per output cell of each
// level actually consumed by a guided or head layer.
template <typename T>
long long pyramid_macs(const Graph<T>& g) {
  long long macs = 0;
  std::map<int, bool> seen;
  for (int i : g.guided_indices()) {
    const int f = g.pyramid_factor(i);
    if (f <= 1 || seen[f]) continue;
    seen[f] = true;
    const auto& s = g.shapes()[i];
    macs += static_cast<long long>(f) * f * s.h * s.w;
  }
  return macs;
}

// Density overrides for analytic what-if reports; index parallels
// Graph::guided_indices(). Head layers reuse the density of the guided layer
// at their resolution when one exists.
template <typename T>
FlopsReport flops_report(const Graph<T>& g, const std::vector<double>& guided_density = {}) {
  const NetworkSpec& spec = g.spec();
  FlopsReport rep;
  const auto& gi = g.guided_indices();
  SCN_CHECK(guided_density.empty() || guided_density.size() == gi.size(),
            "flops_report: density list does not match guided layer count");

  std::map<int, double> density_by_layer;
  std::map<int, double> density_by_factor;
  for (size_t k = 0; k < gi.size(); ++k) {
    const double d = guided_density.empty() ? 1.0 : guided_density[k];
    SCN_CHECK(d >= 0.0 && d <= 1.0, "flops_report: density out of range");
    density_by_layer[gi[k]] = d;
    density_by_factor[g.pyramid_factor(gi[k])] = d;
  }

  int in_c = spec.in_channels;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& d = spec.layers[i];
    const auto& s = g.shapes()[i];
    LayerCost lc;
    lc.name = d.name;
    if (d.kind == LayerKind::Conv) {
      const long long ic = d.in_channels > 0 ? d.in_channels : in_c;
      lc.dense_macs = detail::conv_macs(d.out_channels, ic, d.kernel, d.kernel, s.h, s.w);
      auto it = density_by_layer.find(static_cast<int>(i));
      if (it != density_by_layer.end()) {
        lc.guided = true;
        lc.density = it->second;
        lc.masked_macs = static_cast<long long>(double(lc.dense_macs) * lc.density + 0.5);
      } else {
        lc.masked_macs = lc.dense_macs;
      }
    }
    in_c = s.c;
    rep.layers.push_back(lc);
  }

  const int cp1 = spec.num_classes + 1;
  for (size_t hi = 0; hi < spec.heads.size(); ++hi) {
    const int li = [&] {
      for (size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].name == spec.heads[hi].layer) return static_cast<int>(i);
      fail("flops_report: unknown head layer");
    }();
    const auto& s = g.shapes()[li];
    const int na = spec.heads[hi].num_anchors();
    const int hk = spec.heads[hi].kernel;
    LayerCost lc;
    lc.name = "head." + spec.heads[hi].layer;
    lc.dense_macs =
        detail::conv_macs(static_cast<long long>(na) * (cp1 + 4), s.c, hk, hk, s.h, s.w);
    if (g.guided() && g.attach_index() >= 0 && li >= g.attach_index()) {
      const int f = g.shapes()[g.attach_index()].h / s.h;
      auto it = density_by_factor.find(f);
      if (it != density_by_factor.end()) {
        lc.guided = true;
        lc.density = it->second;
        lc.masked_macs = static_cast<long long>(double(lc.dense_macs) * lc.density + 0.5);
      } else {
        lc.masked_macs = lc.dense_macs;
      }
    } else {
      lc.masked_macs = lc.dense_macs;
    }
    rep.layers.push_back(lc);
  }

  for (const LayerCost& lc : rep.layers) {
    rep.dense_total += lc.dense_macs;
    rep.masked_total += lc.masked_macs;
  }
  if (g.attach_index() >= 0) {
    const auto& a = g.shapes()[g.attach_index()];
    rep.overhead_macs = selective_module_macs(spec.selective, a.c, a.h, a.w) + pyramid_macs(g);
  }
  return rep;
}

// Per-image accounting from an executed forward pass: guided work is priced
// as (dense MACs per cell) * (mask ones), the exact integer the instrumented
// row-product meter implies. Soft and baseline runs price everything dense.
template <typename T>
FlopsReport flops_report(const Graph<T>& g, const ForwardOut<T>& fo) {
  FlopsReport rep = flops_report(g);
  if (fo.hard_levels.empty() || !g.guided()) return rep;

  auto level_ones = [&](int h, int w) -> long long {
    for (const SaliencyMask& m : fo.hard_levels)
      if (m.h() == h && m.w() == w) return m.ones();
    fail("flops_report: no mask level for a ", h, "x", w, " grid");
  };
  auto price = [&](LayerCost& lc, int h, int w) {
    const long long cells = static_cast<long long>(h) * w;
    const long long ones = level_ones(h, w);
    lc.guided = true;
    lc.density = double(ones) / double(cells);
    lc.masked_macs = (lc.dense_macs / cells) * ones;
  };

  for (int i : g.guided_indices()) price(rep.layers[i], g.shapes()[i].h, g.shapes()[i].w);
  const size_t n_layers = g.spec().layers.size();
  for (size_t hi = 0; hi < g.spec().heads.size(); ++hi) {
    const auto grid = g.head_grids()[hi];
    price(rep.layers[n_layers + hi], grid[0], grid[1]);
  }

  rep.masked_total = 0;
  for (const LayerCost& l : rep.layers) rep.masked_total += l.masked_macs;
  return rep;
}

// Average of per-image reports; layer tables must agree structurally.
inline FlopsReport average_reports(const std::vector<FlopsReport>& reps) {
  SCN_CHECK(!reps.empty(), "average_reports: empty set");
  FlopsReport avg = reps[0];
  for (size_t r = 1; r < reps.size(); ++r) {
    SCN_CHECK(reps[r].layers.size() == avg.layers.size(), "average_reports: layer count differs");
    for (size_t i = 0; i < avg.layers.size(); ++i) {
      avg.layers[i].masked_macs += reps[r].layers[i].masked_macs;
      avg.layers[i].density += reps[r].layers[i].density;
    }
    avg.masked_total += reps[r].masked_total;
  }
  const long long n = static_cast<long long>(reps.size());
  for (LayerCost& l : avg.layers) {
    l.masked_macs = (l.masked_macs + n / 2) / n;
    l.density /= double(n);
  }
  avg.masked_total = (avg.masked_total + n / 2) / n;
  return avg;
}

inline std::string format_report(const FlopsReport& rep, FlopsConvention conv) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "layer" << std::right << std::setw(16) << "dense"
     << std::setw(16) << "masked" << std::setw(10) << "density" << "\n";
  for (const LayerCost& l : rep.layers) {
    os << std::left << std::setw(18) << l.name << std::right << std::setw(16)
       << apply_convention(l.dense_macs, conv) << std::setw(16)
       << apply_convention(l.masked_macs, conv) << std::setw(10) << std::fixed
       << std::setprecision(3) << (l.guided ? l.density : 1.0) << "\n";
  }
  os << std::left << std::setw(18) << "total" << std::right << std::setw(16)
     << apply_convention(rep.dense_total, conv) << std::setw(16)
     << apply_convention(rep.masked_total, conv) << "\n";
  os << "convention: " << convention_name(conv) << "\n";
  os << "mask branch overhead: " << apply_convention(rep.overhead_macs, conv) << "\n";
  os << std::setprecision(2) << "reduced: " << rep.reduced_percent()
     << "% (with overhead: " << rep.reduced_percent_with_overhead() << "%)\n";
  return os.str();
}

inline std::string report_csv(const FlopsReport& rep, FlopsConvention conv) {
  std::ostringstream os;
  os << "layer,dense_flops,masked_flops,density\n";
  for (const LayerCost& l : rep.layers)
    os << l.name << "," << apply_convention(l.dense_macs, conv) << ","
       << apply_convention(l.masked_macs, conv) << "," << (l.guided ? l.density : 1.0) << "\n";
  os << "total," << apply_convention(rep.dense_total, conv) << ","
     << apply_convention(rep.masked_total, conv) << ",\n";
  return os.str();
}

}  // namespace scn
