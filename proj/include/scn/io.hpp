#pragma once
// On-disk formats, all little-endian and byte-exact:
//   * weights: "SCNW" magic, u32 version, named f32 tensors
//   * images: binary PPM (P6) scaled to [0,1]; masks exported as PGM (P5)
//   * box labels: one "class x1 y1 x2 y2" line per object
//   * network specs: strict JSON; unknown keys are errors
// Malformed input raises SchemaError so the CLI can map it to its own exit
// code, distinct from contract violations.

#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scn/graph.hpp"
#include "scn/mask.hpp"

namespace scn {

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& msg) : Error(msg) {}
};

template <typename... Args>
[[noreturn]] void schema_fail(const Args&... args) {
  throw SchemaError(cat(args...));
}

namespace wire {

inline void wr_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }
inline void wr_u16(std::ostream& os, uint16_t v) {
  os.put(static_cast<char>(v & 0xff));
  os.put(static_cast<char>(v >> 8));
}
inline void wr_u32(std::ostream& os, uint32_t v) {
  for (int s = 0; s < 32; s += 8) os.put(static_cast<char>((v >> s) & 0xff));
}
inline void wr_f32(std::ostream& os, float v) {
  uint32_t u;
  static_assert(sizeof(u) == sizeof(v));
  std::memcpy(&u, &v, 4);
  wr_u32(os, u);
}

inline uint8_t rd_u8(std::istream& is) {
  const int c = is.get();
  if (c == EOF) schema_fail("weights: truncated file");
  return static_cast<uint8_t>(c);
}
inline uint16_t rd_u16(std::istream& is) {
  const uint16_t lo = rd_u8(is);
  return static_cast<uint16_t>(lo | (static_cast<uint16_t>(rd_u8(is)) << 8));
}
inline uint32_t rd_u32(std::istream& is) {
  uint32_t v = 0;
  for (int s = 0; s < 32; s += 8) v |= static_cast<uint32_t>(rd_u8(is)) << s;
  return v;
}
inline float rd_f32(std::istream& is) {
  const uint32_t u = rd_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace wire

// ---------------------------------------------------------------------------
// Weight files. Layout: "SCNW", u32 version=1, u32 tensor count; per tensor
// u16 name length, name bytes, u8 rank, u32 dims[rank], raw f32 data.
// ---------------------------------------------------------------------------

struct TensorBlob {
  std::vector<uint32_t> dims;
  std::vector<float> data;

  long long numel() const {
    long long n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

inline void save_blobs(const std::string& path,
                       const std::vector<std::pair<std::string, TensorBlob>>& items) {
  std::ofstream os(path, std::ios::binary);
  SCN_CHECK(os.good(), "weights: cannot open '", path, "' for writing");
  os.write("SCNW", 4);
  wire::wr_u32(os, 1u);
  wire::wr_u32(os, static_cast<uint32_t>(items.size()));
  for (const auto& [name, blob] : items) {
    SCN_CHECK(name.size() <= 0xffff, "weights: tensor name too long");
    wire::wr_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    wire::wr_u8(os, static_cast<uint8_t>(blob.dims.size()));
    for (uint32_t d : blob.dims) wire::wr_u32(os, d);
    for (float v : blob.data) wire::wr_f32(os, v);
  }
  SCN_CHECK(os.good(), "weights: write to '", path, "' failed");
}

inline std::vector<std::pair<std::string, TensorBlob>> load_blobs(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) schema_fail("weights: cannot open '", path, "'");
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "SCNW")
    schema_fail("weights: '", path, "' is not a weight file (bad magic)");
  const uint32_t version = wire::rd_u32(is);
  if (version != 1) schema_fail("weights: unsupported version ", version);
  const uint32_t count = wire::rd_u32(is);

  std::vector<std::pair<std::string, TensorBlob>> items;
  std::set<std::string> seen;
  for (uint32_t t = 0; t < count; ++t) {
    const uint16_t nlen = wire::rd_u16(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (is.gcount() != nlen) schema_fail("weights: truncated file");
    if (!seen.insert(name).second) schema_fail("weights: duplicate tensor '", name, "'");
    TensorBlob blob;
    const uint8_t rank = wire::rd_u8(is);
    blob.dims.resize(rank);
    for (uint8_t r = 0; r < rank; ++r) blob.dims[r] = wire::rd_u32(is);
    blob.data.resize(static_cast<size_t>(blob.numel()));
    for (float& v : blob.data) v = wire::rd_f32(is);
    items.emplace_back(std::move(name), std::move(blob));
  }
  return items;
}

template <typename T>
void save_weights(const std::string& path, Graph<T>& g) {
  std::vector<std::pair<std::string, TensorBlob>> items;
  for (const ParamRef<T>& p : g.params()) {
    TensorBlob blob;
    blob.dims = {static_cast<uint32_t>(p.value->n()), static_cast<uint32_t>(p.value->c()),
                 static_cast<uint32_t>(p.value->h()), static_cast<uint32_t>(p.value->w())};
    blob.data.resize(static_cast<size_t>(p.value->numel()));
    for (long long i = 0; i < p.value->numel(); ++i)
      blob.data[static_cast<size_t>(i)] = static_cast<float>(p.value->data()[i]);
    items.emplace_back(p.name, std::move(blob));
  }
  save_blobs(path, items);
}

template <typename T>
void load_weights(const std::string& path, Graph<T>& g) {
  std::map<std::string, TensorBlob> by_name;
  for (auto& [name, blob] : load_blobs(path)) by_name.emplace(std::move(name), std::move(blob));

  for (ParamRef<T>& p : g.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) schema_fail("weights: missing tensor '", p.name, "'");
    const TensorBlob& blob = it->second;
    const std::vector<uint32_t> want = {
        static_cast<uint32_t>(p.value->n()), static_cast<uint32_t>(p.value->c()),
        static_cast<uint32_t>(p.value->h()), static_cast<uint32_t>(p.value->w())};
    if (blob.dims != want)
      schema_fail("weights: tensor '", p.name, "' has mismatched shape for this spec");
    for (long long i = 0; i < p.value->numel(); ++i)
      p.value->data()[i] = static_cast<T>(blob.data[static_cast<size_t>(i)]);
    by_name.erase(it);
  }
  if (!by_name.empty())
    schema_fail("weights: file carries unknown tensor '", by_name.begin()->first, "'");
}

// ---------------------------------------------------------------------------
// Images and masks. PPM P6 for 3-channel input, PGM P5 for mask export.
// ---------------------------------------------------------------------------

template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
  SCN_CHECK(img.n() == 1 && img.c() == 3, "ppm: expected a 1x3xHxW tensor");
  std::ofstream os(path, std::ios::binary);
  SCN_CHECK(os.good(), "ppm: cannot open '", path, "' for writing");
  os << "P6\n" << img.w() << " " << img.h() << "\n255\n";
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x)
      for (int c = 0; c < 3; ++c) {
        double v = static_cast<double>(img.at(0, c, y, x));
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        os.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
      }
  SCN_CHECK(os.good(), "ppm: write to '", path, "' failed");
}

namespace wire {

// PPM header tokens may be separated by whitespace and '#' comments
inline int ppm_token(std::istream& is, const std::string& path) {
  int c = is.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = is.get();
    c = is.get();
  }
  int v = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) schema_fail("ppm: malformed header in '", path, "'");
  return v;
}

}  // namespace wire

template <typename T>
Tensor<T> read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) schema_fail("ppm: cannot open '", path, "'");
  char p = 0, six = 0;
  is.get(p);
  is.get(six);
  if (p != 'P' || six != '6') schema_fail("ppm: '", path, "' is not a binary PPM");
  const int w = wire::ppm_token(is, path);
  const int h = wire::ppm_token(is, path);
  const int maxval = wire::ppm_token(is, path);
  if (maxval != 255) schema_fail("ppm: '", path, "' uses unsupported maxval ", maxval);
  // ppm_token consumed the single whitespace byte after maxval already
  Tensor<T> img(1, 3, h, w);
  std::vector<char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    is.read(row.data(), static_cast<std::streamsize>(row.size()));
    if (is.gcount() != static_cast<std::streamsize>(row.size()))
      schema_fail("ppm: '", path, "' truncated at row ", y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(0, c, y, x) =
            static_cast<T>(static_cast<uint8_t>(row[static_cast<size_t>(x) * 3 + c]) / T(255));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Box labels: "class x1 y1 x2 y2" per line, pixel coordinates.
// (Mask PGM export lives next to SaliencyMask in mask.hpp.)
// ---------------------------------------------------------------------------

inline void write_boxes(const std::string& path, const std::vector<BoundingBox>& boxes) {
  std::ofstream os(path);
  SCN_CHECK(os.good(), "labels: cannot open '", path, "' for writing");
  for (const BoundingBox& b : boxes)
    os << b.class_id << " " << b.x1 << " " << b.y1 << " " << b.x2 << " " << b.y2 << "\n";
  SCN_CHECK(os.good(), "labels: write to '", path, "' failed");
}

inline std::vector<BoundingBox> read_boxes(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) schema_fail("labels: cannot open '", path, "'");
  std::vector<BoundingBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    BoundingBox b;
    std::string extra;
    if (!(ls >> b.class_id >> b.x1 >> b.y1 >> b.x2 >> b.y2) || (ls >> extra))
      schema_fail("labels: '", path, "' line ", lineno, " is not 'class x1 y1 x2 y2'");
    boxes.push_back(b);
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Network spec JSON. Every object is checked against its allowed key set so
// typos fail loudly instead of silently falling back to defaults.
// ---------------------------------------------------------------------------

namespace spec_json {

using nlohmann::json;

inline void allow_keys(const json& o, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
  if (!o.is_object()) schema_fail("spec: ", ctx, " must be an object");
  for (const auto& kv : o.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || kv.key() == a;
    if (!ok) schema_fail("spec: unknown key '", kv.key(), "' in ", ctx);
  }
}

template <typename T>
T want(const json& o, const std::string& ctx, const char* key) {
  if (!o.contains(key)) schema_fail("spec: ", ctx, " is missing required key '", key, "'");
  try {
    return o.at(key).get<T>();
  } catch (const json::exception&) {
    schema_fail("spec: key '", key, "' in ", ctx, " has the wrong type");
  }
}

template <typename T>
T want_or(const json& o, const std::string& ctx, const char* key, T def) {
  if (!o.contains(key)) return def;
  try {
    return o.at(key).get<T>();
  } catch (const json::exception&) {
    schema_fail("spec: key '", key, "' in ", ctx, " has the wrong type");
  }
}

inline LayerDesc parse_layer(const json& o, size_t idx) {
  const std::string ctx = "layers[" + std::to_string(idx) + "]";
  const std::string type = want<std::string>(o, ctx, "type");
  LayerDesc d;
  d.name = want<std::string>(o, ctx, "name");
  if (type == "conv") {
    allow_keys(o, ctx, {"type", "name", "out_channels", "in_channels", "kernel", "stride", "pad",
                        "dilation", "relu"});
    d.kind = LayerKind::Conv;
    d.out_channels = want<int>(o, ctx, "out_channels");
    d.in_channels = want_or<int>(o, ctx, "in_channels", 0);
    d.kernel = want_or<int>(o, ctx, "kernel", 3);
    d.stride = want_or<int>(o, ctx, "stride", 1);
    d.pad = want_or<int>(o, ctx, "pad", 1);
    d.dilation = want_or<int>(o, ctx, "dilation", 1);
    d.relu = want_or<bool>(o, ctx, "relu", true);
  } else if (type == "maxpool") {
    allow_keys(o, ctx, {"type", "name", "window", "stride", "pad", "ceil_mode"});
    d.kind = LayerKind::MaxPool;
    d.window = want_or<int>(o, ctx, "window", 2);
    d.stride = want_or<int>(o, ctx, "stride", 2);
    d.pad = want_or<int>(o, ctx, "pad", 0);
    d.ceil_mode = want_or<bool>(o, ctx, "ceil_mode", false);
  } else {
    schema_fail("spec: ", ctx, " has unknown type '", type, "'");
  }
  return d;
}

inline HeadSpec parse_head(const json& o, size_t idx) {
  const std::string ctx = "heads[" + std::to_string(idx) + "]";
  allow_keys(o, ctx, {"layer", "scales", "ratios", "anchors_override", "kernel"});
  HeadSpec h;
  h.layer = want<std::string>(o, ctx, "layer");
  h.scales = want_or<std::vector<float>>(o, ctx, "scales", {});
  h.ratios = want_or<std::vector<float>>(o, ctx, "ratios", {});
  h.anchors_override = want_or<int>(o, ctx, "anchors_override", 0);
  h.kernel = want_or<int>(o, ctx, "kernel", 3);
  return h;
}

}  // namespace spec_json

inline NetworkSpec parse_spec(const nlohmann::json& j) {
  using namespace spec_json;
  allow_keys(j, "the top level",
             {"input", "num_classes", "layers", "attach_point", "guided_layers", "heads",
              "selective_cfg", "supervision", "pyramid", "gate_layers"});
  NetworkSpec s;

  const json in = want<json>(j, "the top level", "input");
  allow_keys(in, "input", {"channels", "height", "width"});
  s.in_channels = want<int>(in, "input", "channels");
  s.in_h = want<int>(in, "input", "height");
  s.in_w = want<int>(in, "input", "width");
  s.num_classes = want<int>(j, "the top level", "num_classes");

  const json layers = want<json>(j, "the top level", "layers");
  if (!layers.is_array() || layers.empty()) schema_fail("spec: layers must be a non-empty array");
  for (size_t i = 0; i < layers.size(); ++i) s.layers.push_back(parse_layer(layers[i], i));

  const json heads = want<json>(j, "the top level", "heads");
  if (!heads.is_array() || heads.empty()) schema_fail("spec: heads must be a non-empty array");
  for (size_t i = 0; i < heads.size(); ++i) s.heads.push_back(parse_head(heads[i], i));

  s.attach_point = want_or<std::string>(j, "the top level", "attach_point", "");
  s.guided_layers = want_or<std::vector<std::string>>(j, "the top level", "guided_layers", {});

  if (j.contains("selective_cfg")) {
    const json sc = j.at("selective_cfg");
    allow_keys(sc, "selective_cfg",
               {"channels", "use_dilated", "dilation_rate", "use_nonlocal", "use_deconv_upsample",
                "use_skip", "use_depthwise_separable"});
    s.selective.channels = want_or<int>(sc, "selective_cfg", "channels", s.selective.channels);
    s.selective.use_dilated =
        want_or<bool>(sc, "selective_cfg", "use_dilated", s.selective.use_dilated);
    s.selective.dilation_rate =
        want_or<int>(sc, "selective_cfg", "dilation_rate", s.selective.dilation_rate);
    s.selective.use_nonlocal =
        want_or<bool>(sc, "selective_cfg", "use_nonlocal", s.selective.use_nonlocal);
    s.selective.use_deconv_upsample =
        want_or<bool>(sc, "selective_cfg", "use_deconv_upsample", s.selective.use_deconv_upsample);
    s.selective.use_skip = want_or<bool>(sc, "selective_cfg", "use_skip", s.selective.use_skip);
    s.selective.use_depthwise_separable = want_or<bool>(
        sc, "selective_cfg", "use_depthwise_separable", s.selective.use_depthwise_separable);
  }

  const std::string sup = want_or<std::string>(j, "the top level", "supervision", "direct");
  if (sup == "direct")
    s.supervision = Supervision::Direct;
  else if (sup == "indirect")
    s.supervision = Supervision::Indirect;
  else
    schema_fail("spec: supervision must be 'direct' or 'indirect', got '", sup, "'");

  if (j.contains("pyramid")) {
    const json py = j.at("pyramid");
    allow_keys(py, "pyramid", {"mode", "trainable"});
    const std::string mode = want_or<std::string>(py, "pyramid", "mode", "stride_conv");
    if (mode == "stride_conv")
      s.pyramid_mode = PyramidMode::StrideConv;
    else if (mode == "maxpool")
      s.pyramid_mode = PyramidMode::MaxPool;
    else
      schema_fail("spec: pyramid mode must be 'stride_conv' or 'maxpool', got '", mode, "'");
    s.pyramid_trainable = want_or<bool>(py, "pyramid", "trainable", false);
  }

  if (j.contains("gate_layers"))
    s.gate_layers = want<std::vector<std::string>>(j, "the top level", "gate_layers");

  return s;
}

inline nlohmann::json serialize_spec(const NetworkSpec& s) {
  nlohmann::json j;
  j["input"] = {{"channels", s.in_channels}, {"height", s.in_h}, {"width", s.in_w}};
  j["num_classes"] = s.num_classes;
  j["layers"] = nlohmann::json::array();
  for (const LayerDesc& d : s.layers) {
    nlohmann::json o;
    o["name"] = d.name;
    if (d.kind == LayerKind::Conv) {
      o["type"] = "conv";
      o["out_channels"] = d.out_channels;
      if (d.in_channels > 0) o["in_channels"] = d.in_channels;
      o["kernel"] = d.kernel;
      o["stride"] = d.stride;
      o["pad"] = d.pad;
      o["dilation"] = d.dilation;
      o["relu"] = d.relu;
    } else {
      o["type"] = "maxpool";
      o["window"] = d.window;
      o["stride"] = d.stride;
      o["pad"] = d.pad;
      o["ceil_mode"] = d.ceil_mode;
    }
    j["layers"].push_back(o);
  }
  if (!s.attach_point.empty()) j["attach_point"] = s.attach_point;
  if (!s.guided_layers.empty()) j["guided_layers"] = s.guided_layers;
  j["heads"] = nlohmann::json::array();
  for (const HeadSpec& h : s.heads) {
    nlohmann::json o;
    o["layer"] = h.layer;
    if (!h.scales.empty()) o["scales"] = h.scales;
    if (!h.ratios.empty()) o["ratios"] = h.ratios;
    if (h.anchors_override > 0) o["anchors_override"] = h.anchors_override;
    o["kernel"] = h.kernel;
    j["heads"].push_back(o);
  }
  j["selective_cfg"] = {{"channels", s.selective.channels},
                        {"use_dilated", s.selective.use_dilated},
                        {"dilation_rate", s.selective.dilation_rate},
                        {"use_nonlocal", s.selective.use_nonlocal},
                        {"use_deconv_upsample", s.selective.use_deconv_upsample},
                        {"use_skip", s.selective.use_skip},
                        {"use_depthwise_separable", s.selective.use_depthwise_separable}};
  j["supervision"] = s.supervision == Supervision::Direct ? "direct" : "indirect";
  j["pyramid"] = {{"mode", s.pyramid_mode == PyramidMode::StrideConv ? "stride_conv" : "maxpool"},
                  {"trainable", s.pyramid_trainable}};
  if (s.gate_layers) j["gate_layers"] = *s.gate_layers;
  return j;
}

inline NetworkSpec load_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) schema_fail("spec: cannot open '", path, "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    schema_fail("spec: '", path, "' is not valid JSON: ", e.what());
  }
  return parse_spec(j);
}

inline void save_spec(const std::string& path, const NetworkSpec& s) {
  std::ofstream os(path);
  SCN_CHECK(os.good(), "spec: cannot open '", path, "' for writing");
  os << serialize_spec(s).dump(2) << "\n";
  SCN_CHECK(os.good(), "spec: write to '", path, "' failed");
}

}  // namespace scn
