#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "floorplan/errors.hpp"
#include "floorplan/geometry.hpp"
#include "floorplan/layout_graph.hpp"
#include "floorplan/nn/layers.hpp"
#include "floorplan/nn/tensor.hpp"

namespace floorplan {

// Architecture hyperparameters.
struct ModelConfig {
  int stages = 4;          // number of 2x descents
  int base_width = 32;     // channels at full resolution; doubled per stage
  int gcn_layers = 3;
  int gcn_hidden = 64;
  int graph_channels = 32;  // width of the tiled graph map at the bottleneck
  int classes = 8;
  int norm_groups = 8;

  int width_at(int stage) const { return base_width << stage; }
  int node_features() const { return classes - 2 + 1; }
  int multiple() const { return 1 << stages; }

  void validate() const {
    if (stages < 1) throw ConfigError("model.stages must be >= 1");
    if (base_width < 1 || gcn_hidden < 1 || graph_channels < 1 || norm_groups < 1)
      throw ConfigError("model widths must be >= 1");
    if (gcn_layers < 1) throw ConfigError("model.gcn_layers must be >= 1");
    if (classes < 3) throw ConfigError("model.classes must be >= 3");
    if (stages > 12) throw ConfigError("model.stages is unreasonably large");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"stages", c.stages},         {"base_width", c.base_width},
          {"gcn_layers", c.gcn_layers}, {"gcn_hidden", c.gcn_hidden},
          {"graph_channels", c.graph_channels}, {"classes", c.classes},
          {"norm_groups", c.norm_groups}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number_integer()) throw ConfigError("model." + key + " must be an integer");
    const int v = value.get<int>();
    if (key == "stages") c.stages = v;
    else if (key == "base_width") c.base_width = v;
    else if (key == "gcn_layers") c.gcn_layers = v;
    else if (key == "gcn_hidden") c.gcn_hidden = v;
    else if (key == "graph_channels") c.graph_channels = v;
    else if (key == "classes") c.classes = v;
    else if (key == "norm_groups") c.norm_groups = v;
    else throw ConfigError("model: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

inline constexpr const char* kModelVersion = "skipgcn-1";

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::string version = kModelVersion;
  nn::TensorSet<T> tensors;

  template <typename U>
  ModelParams<U> cast() const {
    return {config, version, tensors.template cast<U>()};
  }
  bool operator==(const ModelParams&) const = default;
};

namespace detail {

inline std::string enc(int k) { return "enc" + std::to_string(k); }
inline std::string dec(int k) { return "dec" + std::to_string(k); }
inline std::string gcn(int l) { return "gcn" + std::to_string(l); }

template <typename T>
void add_conv_block(nn::TensorSet<T>& ts, const std::string& prefix, int in, int out) {
  ts.add(prefix + ".conv1.weight", {out, in, 3, 3});
  ts.add(prefix + ".norm1.scale", {out});
  ts.add(prefix + ".norm1.shift", {out});
  ts.add(prefix + ".conv2.weight", {out, out, 3, 3});
  ts.add(prefix + ".norm2.scale", {out});
  ts.add(prefix + ".norm2.shift", {out});
}

}  // namespace detail

// Tensor names and shapes for a config, zero-filled.
template <typename T>
nn::TensorSet<T> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  nn::TensorSet<T> ts;
  const int s = cfg.stages;
  for (int k = 0; k <= s; ++k)
    detail::add_conv_block(ts, detail::enc(k), k == 0 ? 3 : cfg.width_at(k - 1), cfg.width_at(k));
  for (int l = 1; l <= cfg.gcn_layers; ++l) {
    const int in = l == 1 ? cfg.node_features() : cfg.gcn_hidden;
    ts.add(detail::gcn(l) + ".weight", {in, cfg.gcn_hidden});
    ts.add(detail::gcn(l) + ".bias", {cfg.gcn_hidden});
  }
  ts.add("graph_proj.weight", {cfg.gcn_hidden, cfg.graph_channels});
  ts.add("graph_proj.bias", {cfg.graph_channels});
  for (int k = s - 1; k >= 0; --k) {
    const int below = k == s - 1 ? cfg.width_at(s) + cfg.graph_channels : cfg.width_at(k + 1);
    const int wk = cfg.width_at(k);
    ts.add(detail::dec(k) + ".up.weight", {wk, below, 3, 3});
    ts.add(detail::dec(k) + ".up.bias", {wk});
    detail::add_conv_block(ts, detail::dec(k), 2 * wk + BoundaryImage::kChannels, wk);
  }
  ts.add("head.weight", {cfg.classes, cfg.width_at(0), 1, 1});
  ts.add("head.bias", {cfg.classes});
  return ts;
}

inline bool is_norm_scale(const std::string& name) {
  return name.size() > 6 && name.compare(name.size() - 6, 6, ".scale") == 0;
}

inline bool is_weight(const std::string& name) {
  return name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

// Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)); biases and norm shifts 0,
// norm scales 1.
template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> p{cfg, kModelVersion, parameter_layout<T>(cfg)};
  std::mt19937_64 rng(seed);
  for (auto& t : p.tensors.all()) {
    if (is_weight(t.name)) {
      const double bound = std::sqrt(6.0 / t.fan_in());
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.data) v = static_cast<T>(dist(rng));
    } else if (is_norm_scale(t.name)) {
      std::fill(t.data.begin(), t.data.end(), T{1});
    }
  }
  return p;
}

// Throws CorruptCheckpointError when names, shapes or values are off.
template <typename T>
void check_params(const ModelParams<T>& p) {
  const auto expected = parameter_layout<T>(p.config);
  if (expected.size() != p.tensors.size())
    throw CorruptCheckpointError("parameter count does not match the model config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = expected.all()[i];
    const auto& t = p.tensors.all()[i];
    if (e.name != t.name || e.shape != t.shape)
      throw CorruptCheckpointError("tensor " + t.name + " does not match layout entry " + e.name);
    for (const auto& v : t.data)
      if (!std::isfinite(static_cast<double>(v)))
        throw CorruptCheckpointError("tensor " + t.name + " has a non-finite value");
  }
}

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct GraphInput {
  Matrix<T> features;   // N x F
  Matrix<T> adjacency;  // N x N normalised
};

template <typename T>
GraphInput<T> make_graph_input(const LayoutGraph& g, const ClassPalette& palette) {
  return {encode_node_features(g, palette).cast<T>(), normalized_adjacency(g).cast<T>()};
}

template <typename T>
nn::FeatureMap<T> boundary_map(const BoundaryImage& b) {
  nn::FeatureMap<T> m(BoundaryImage::kChannels, b.height, b.width);
  for (std::size_t i = 0; i < b.data.size(); ++i) m.data[i] = static_cast<T>(b.data[i]);
  return m;
}

// Row-major weight [in, out] as an Eigen matrix.
template <typename T>
Matrix<T> weight_matrix(const nn::Tensor<T>& w) {
  return nn::ConstMatMap<T>(w.data.data(), w.shape[0], w.shape[1]);
}

// activation(A H W + b); the caller decides whether to apply the activation.
template <typename T>
Matrix<T> gcn_layer(const Matrix<T>& h, const Matrix<T>& adjacency, const Matrix<T>& weight,
                    const Vector<T>& bias, bool activate) {
  if (h.cols() != weight.rows() || adjacency.rows() != h.rows() ||
      adjacency.cols() != h.rows() || bias.size() != weight.cols())
    throw DimensionError("gcn_layer shape mismatch");
  Matrix<T> out = adjacency * h * weight;
  out.rowwise() += bias.transpose();
  if (activate) out = out.cwiseMax(T{});
  return out;
}

// Broadcast v to every spatial position.
template <typename T>
nn::FeatureMap<T> tile_graph_features(const Vector<T>& v, int h, int w) {
  if (h < 1 || w < 1) throw DimensionError("tile target must be at least 1x1");
  nn::FeatureMap<T> m(static_cast<int>(v.size()), h, w);
  for (int c = 0; c < m.channels; ++c) std::fill(m.channel(c), m.channel(c) + m.plane(), v(c));
  return m;
}

template <typename T>
Vector<T> tile_graph_features_backward(const nn::FeatureMap<T>& d) {
  Vector<T> g(d.channels);
  for (int c = 0; c < d.channels; ++c) {
    T s{};
    for (std::size_t i = 0; i < d.plane(); ++i) s += d.channel(c)[i];
    g(c) = s;
  }
  return g;
}

template <typename T>
struct GraphCache {
  std::vector<Matrix<T>> inputs;  // input to each layer
  std::vector<Matrix<T>> outputs; // post-activation output of each layer
  Vector<T> pooled;
};

template <typename T>
Vector<T> graph_encode(const ModelParams<T>& p, const GraphInput<T>& g, GraphCache<T>* cache) {
  const auto& cfg = p.config;
  if (g.features.cols() != cfg.node_features())
    throw InvalidGraph("node feature width " + std::to_string(g.features.cols()) +
                       " does not match model (" + std::to_string(cfg.node_features()) + ")");
  if (g.features.rows() < 1) throw InvalidGraph("graph has no nodes");
  Matrix<T> h = g.features;
  for (int l = 1; l <= cfg.gcn_layers; ++l) {
    const auto& w = p.tensors[detail::gcn(l) + ".weight"];
    const auto& b = p.tensors[detail::gcn(l) + ".bias"];
    if (cache) cache->inputs.push_back(h);
    h = gcn_layer<T>(h, g.adjacency, weight_matrix(w),
                     Eigen::Map<const Vector<T>>(b.data.data(), b.data.size()),
                     l < cfg.gcn_layers);
    if (cache) cache->outputs.push_back(h);
  }
  Vector<T> pooled = h.colwise().mean().transpose();
  const auto& pw = p.tensors["graph_proj.weight"];
  const auto& pb = p.tensors["graph_proj.bias"];
  Vector<T> v = weight_matrix(pw).transpose() * pooled +
                Eigen::Map<const Vector<T>>(pb.data.data(), pb.data.size());
  if (cache) cache->pooled = pooled;
  return v;
}

template <typename T>
void graph_encode_backward(const ModelParams<T>& p, const GraphInput<T>& g,
                           const GraphCache<T>& cache, const Vector<T>& dv,
                           nn::TensorSet<T>& grads) {
  const auto& cfg = p.config;
  {
    auto& gw = grads["graph_proj.weight"];
    auto& gb = grads["graph_proj.bias"];
    nn::MatMap<T>(gw.data.data(), gw.shape[0], gw.shape[1]) += cache.pooled * dv.transpose();
    for (Eigen::Index i = 0; i < dv.size(); ++i) gb.data[i] += dv(i);
  }
  const Vector<T> dpooled = weight_matrix(p.tensors["graph_proj.weight"]) * dv;
  const auto n = g.features.rows();
  Matrix<T> dh = (Matrix<T>::Ones(n, 1) * dpooled.transpose()) / static_cast<T>(n);
  for (int l = cfg.gcn_layers; l >= 1; --l) {
    const auto& out = cache.outputs[l - 1];
    if (l < cfg.gcn_layers) dh = dh.cwiseProduct((out.array() > T{}).template cast<T>().matrix());
    auto& gw = grads[detail::gcn(l) + ".weight"];
    auto& gb = grads[detail::gcn(l) + ".bias"];
    const Matrix<T> ah = g.adjacency * cache.inputs[l - 1];
    nn::MatMap<T>(gw.data.data(), gw.shape[0], gw.shape[1]) += ah.transpose() * dh;
    const Vector<T> db = dh.colwise().sum().transpose();
    for (Eigen::Index i = 0; i < db.size(); ++i) gb.data[i] += db(i);
    if (l > 1) dh = g.adjacency.transpose() * dh * weight_matrix(p.tensors[detail::gcn(l) + ".weight"]).transpose();
  }
}

// conv -> norm -> ReLU, twice.
template <typename T>
struct BlockCache {
  nn::FeatureMap<T> in1, in2;
  nn::GroupNormCache<T> norm1, norm2;
  nn::FeatureMap<T> out1, out2;
};

template <typename T>
nn::FeatureMap<T> conv_block(const ModelParams<T>& p, const std::string& prefix,
                             const nn::FeatureMap<T>& x, BlockCache<T>* cache) {
  const auto& ts = p.tensors;
  const int groups = p.config.norm_groups;
  auto y = nn::conv2d<T>(x, ts[prefix + ".conv1.weight"], nullptr);
  y = nn::group_norm<T>(y, ts[prefix + ".norm1.scale"], ts[prefix + ".norm1.shift"], groups,
                        cache ? &cache->norm1 : nullptr);
  nn::relu_inplace(y);
  auto z = nn::conv2d<T>(y, ts[prefix + ".conv2.weight"], nullptr);
  z = nn::group_norm<T>(z, ts[prefix + ".norm2.scale"], ts[prefix + ".norm2.shift"], groups,
                        cache ? &cache->norm2 : nullptr);
  nn::relu_inplace(z);
  if (cache) {
    cache->in1 = x;
    cache->out1 = y;
    cache->in2 = y;
    cache->out2 = z;
  }
  return z;
}

template <typename T>
nn::FeatureMap<T> conv_block_backward(const ModelParams<T>& p, const std::string& prefix,
                                      const BlockCache<T>& cache, nn::FeatureMap<T> dy,
                                      nn::TensorSet<T>& grads) {
  const auto& ts = p.tensors;
  nn::relu_backward_inplace(cache.out2, dy);
  auto d = nn::group_norm_backward<T>(cache.norm2, ts[prefix + ".norm2.scale"], dy,
                                      grads[prefix + ".norm2.scale"],
                                      grads[prefix + ".norm2.shift"]);
  d = nn::conv2d_backward<T>(cache.in2, ts[prefix + ".conv2.weight"], d,
                             grads[prefix + ".conv2.weight"], nullptr);
  nn::relu_backward_inplace(cache.out1, d);
  d = nn::group_norm_backward<T>(cache.norm1, ts[prefix + ".norm1.scale"], d,
                                 grads[prefix + ".norm1.scale"], grads[prefix + ".norm1.shift"]);
  return nn::conv2d_backward<T>(cache.in1, ts[prefix + ".conv1.weight"], d,
                                grads[prefix + ".conv1.weight"], nullptr);
}

template <typename T>
struct FeaturePyramid {
  std::vector<nn::FeatureMap<T>> skips;  // skips[k] at H / 2^k
  nn::FeatureMap<T> bottleneck;          // at H / 2^S
};

template <typename T>
struct EncoderCache {
  std::vector<BlockCache<T>> blocks;
  std::vector<std::vector<int>> pool_argmax;
};

template <typename T>
void check_input_dims(const ModelConfig& cfg, int h, int w) {
  if (h < cfg.multiple() || w < cfg.multiple() || h % cfg.multiple() || w % cfg.multiple())
    throw DimensionError("input " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not a positive multiple of " + std::to_string(cfg.multiple()));
}

template <typename T>
FeaturePyramid<T> encoder_forward(const ModelParams<T>& p, const nn::FeatureMap<T>& boundary,
                                  EncoderCache<T>* cache) {
  const auto& cfg = p.config;
  if (boundary.channels != BoundaryImage::kChannels)
    throw DimensionError("encoder expects a 3-channel boundary image");
  check_input_dims<T>(cfg, boundary.height, boundary.width);
  FeaturePyramid<T> out;
  if (cache) {
    cache->blocks.resize(cfg.stages + 1);
    cache->pool_argmax.resize(cfg.stages);
  }
  nn::FeatureMap<T> x = boundary;
  for (int k = 0; k < cfg.stages; ++k) {
    auto skip = conv_block(p, detail::enc(k), x, cache ? &cache->blocks[k] : nullptr);
    x = nn::max_pool2(skip, cache ? &cache->pool_argmax[k] : nullptr);
    out.skips.push_back(std::move(skip));
  }
  out.bottleneck =
      conv_block(p, detail::enc(cfg.stages), x, cache ? &cache->blocks[cfg.stages] : nullptr);
  return out;
}

struct ForwardOptions {
  bool zero_boundary_fusion = false;
};

template <typename T>
struct DecoderCache {
  std::vector<nn::FeatureMap<T>> up_inputs;  // upsampled map fed to the up conv, per stage
  std::vector<BlockCache<T>> blocks;
  nn::FeatureMap<T> head_input;
};

// `deep` is the bottleneck already concatenated with the tiled graph map.
template <typename T>
nn::FeatureMap<T> decoder_forward(const ModelParams<T>& p, const nn::FeatureMap<T>& deep,
                                  const FeaturePyramid<T>& pyramid, const BoundaryImage& boundary,
                                  DecoderCache<T>* cache, const ForwardOptions& opt = {}) {
  const auto& cfg = p.config;
  const auto& ts = p.tensors;
  const int expected = cfg.width_at(cfg.stages) + cfg.graph_channels;
  if (deep.channels != expected)
    throw DimensionError("decoder expects " + std::to_string(expected) + " bottleneck channels");
  if (static_cast<int>(pyramid.skips.size()) != cfg.stages)
    throw DimensionError("pyramid has the wrong number of skips");
  if (cache) {
    cache->up_inputs.resize(cfg.stages);
    cache->blocks.resize(cfg.stages);
  }
  nn::FeatureMap<T> x = deep;
  for (int k = cfg.stages - 1; k >= 0; --k) {
    const auto& skip = pyramid.skips[k];
    auto up_in = nn::upsample2(x);
    auto up = nn::conv2d<T>(up_in, ts[detail::dec(k) + ".up.weight"], &ts[detail::dec(k) + ".up.bias"]);
    nn::FeatureMap<T> fused = boundary_map<T>(resize_boundary(boundary, skip.height, skip.width));
    if (opt.zero_boundary_fusion) std::fill(fused.data.begin(), fused.data.end(), T{});
    auto cat = nn::concat_channels<T>({&up, &skip, &fused});
    if (cache) cache->up_inputs[k] = std::move(up_in);
    x = conv_block(p, detail::dec(k), cat, cache ? &cache->blocks[k] : nullptr);
  }
  if (cache) cache->head_input = x;
  return nn::conv2d<T>(x, ts["head.weight"], &ts["head.bias"]);
}

template <typename T>
struct ForwardCache {
  EncoderCache<T> encoder;
  GraphCache<T> graph;
  DecoderCache<T> decoder;
  int bottleneck_channels = 0;
};

// Per-pixel class logits C x H x W for one sample.
template <typename T>
nn::FeatureMap<T> forward_logits(const ModelParams<T>& p, const BoundaryImage& boundary,
                                 const GraphInput<T>& graph, ForwardCache<T>* cache = nullptr,
                                 const ForwardOptions& opt = {}) {
  auto bmap = boundary_map<T>(boundary);
  auto pyramid = encoder_forward(p, bmap, cache ? &cache->encoder : nullptr);
  const Vector<T> v = graph_encode(p, graph, cache ? &cache->graph : nullptr);
  const auto tiled =
      tile_graph_features<T>(v, pyramid.bottleneck.height, pyramid.bottleneck.width);
  const auto deep = nn::concat_channels<T>({&pyramid.bottleneck, &tiled});
  if (cache) cache->bottleneck_channels = pyramid.bottleneck.channels;
  return decoder_forward(p, deep, pyramid, boundary, cache ? &cache->decoder : nullptr, opt);
}

// Accumulates parameter gradients for one sample given dLoss/dlogits.
template <typename T>
void backward(const ModelParams<T>& p, const GraphInput<T>& graph, const ForwardCache<T>& cache,
              const nn::FeatureMap<T>& dlogits, nn::TensorSet<T>& grads) {
  const auto& cfg = p.config;
  const auto& ts = p.tensors;
  auto d = nn::conv2d_backward<T>(cache.decoder.head_input, ts["head.weight"], dlogits,
                                  grads["head.weight"], &grads["head.bias"]);
  std::vector<nn::FeatureMap<T>> dskips(cfg.stages);
  for (int k = 0; k < cfg.stages; ++k) {
    const std::string name = detail::dec(k);
    auto dcat = conv_block_backward(p, name, cache.decoder.blocks[k], std::move(d), grads);
    const int wk = cfg.width_at(k);
    auto dup = nn::slice_channels(dcat, 0, wk);
    dskips[k] = nn::slice_channels(dcat, wk, wk);
    auto dup_in = nn::conv2d_backward<T>(cache.decoder.up_inputs[k], ts[name + ".up.weight"], dup,
                                         grads[name + ".up.weight"], &grads[name + ".up.bias"]);
    d = nn::upsample2_backward(dup_in);
  }
  // d is now the gradient of the concatenated bottleneck + graph map.
  const int bc = cache.bottleneck_channels;
  auto dbottleneck = nn::slice_channels(d, 0, bc);
  auto dtile = nn::slice_channels(d, bc, d.channels - bc);
  graph_encode_backward(p, graph, cache.graph, tile_graph_features_backward(dtile), grads);

  d = conv_block_backward(p, detail::enc(cfg.stages), cache.encoder.blocks[cfg.stages],
                          std::move(dbottleneck), grads);
  for (int k = cfg.stages - 1; k >= 0; --k) {
    auto dskip = nn::max_pool2_backward(d, cache.encoder.pool_argmax[k]);
    for (std::size_t i = 0; i < dskip.size(); ++i) dskip.data[i] += dskips[k].data[i];
    d = conv_block_backward(p, detail::enc(k), cache.encoder.blocks[k], std::move(dskip), grads);
  }
}

template <typename T>
nn::FeatureMap<T> forward_probabilities(const ModelParams<T>& p, const BoundaryImage& boundary,
                                        const GraphInput<T>& graph,
                                        const ForwardOptions& opt = {}) {
  return nn::softmax_channels(forward_logits<T>(p, boundary, graph, nullptr, opt));
}

template <typename T>
nn::FeatureMap<T> forward(const ModelParams<T>& p, const BoundaryImage& boundary,
                          const LayoutGraph& graph, const ClassPalette& palette) {
  if (palette.num_classes() != p.config.classes)
    throw ConfigError("palette has " + std::to_string(palette.num_classes()) +
                      " classes, model expects " + std::to_string(p.config.classes));
  return forward_probabilities(p, boundary, make_graph_input<T>(graph, palette));
}

// Per-pixel argmax; ties resolve to the lowest class id.
template <typename T>
LabelGrid predict(const nn::FeatureMap<T>& probs) {
  LabelGrid out(probs.height, probs.width);
  const std::size_t hw = probs.plane();
  for (std::size_t i = 0; i < hw; ++i) {
    int best = 0;
    T bv = probs.data[i];
    for (int c = 1; c < probs.channels; ++c)
      if (probs.data[c * hw + i] > bv) {
        bv = probs.data[c * hw + i];
        best = c;
      }
    out.values[i] = best;
  }
  return out;
}

}  // namespace floorplan
